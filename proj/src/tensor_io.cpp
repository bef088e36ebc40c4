// Copyright 2026 The Shears Authors
// SPDX-License-Identifier: Apache-2.0

#include "shears/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "shears/error.hpp"

namespace shears {

namespace {

constexpr std::array<std::uint8_t, 4> kMagic{'S', 'H', 'R', 'T'};

template <typename T>
std::size_t put_le(std::uint8_t* out, T value)
{
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out[i] = static_cast<std::uint8_t>(value >> (8 * i));
    }
    return sizeof(T);
}

class Reader {
public:
    Reader(const std::vector<std::uint8_t>& bytes, const std::string& origin)
        : bytes_(bytes), origin_(origin)
    {
    }

    template <typename T>
    T get_le()
    {
        need(sizeof(T));
        T value = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            value |= static_cast<T>(bytes_[pos_ + i]) << (8 * i);
        }
        pos_ += sizeof(T);
        return value;
    }

    void need(std::size_t n) const
    {
        if (bytes_.size() - pos_ < n) {
            throw ArtifactError(origin_ + ": truncated tensor file");
        }
    }

    [[nodiscard]] std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    const std::vector<std::uint8_t>& bytes_;
    const std::string& origin_;
    std::size_t pos_ = 0;
};

} // namespace

std::vector<std::uint8_t> encode_tensor(const DenseMatrix& m)
{
    std::vector<std::uint8_t> out(kMagic.size() + 4 + 4 + 16 + 4 * m.size());
    std::uint8_t* p = std::copy(kMagic.begin(), kMagic.end(), out.data());
    p += put_le<std::uint32_t>(p, kTensorFormatVersion);
    p += put_le<std::uint32_t>(p, 2);
    p += put_le<std::uint64_t>(p, m.rows());
    p += put_le<std::uint64_t>(p, m.cols());
    for (float v : m.values()) {
        p += put_le<std::uint32_t>(p, std::bit_cast<std::uint32_t>(v));
    }
    return out;
}

DenseMatrix decode_tensor(const std::vector<std::uint8_t>& bytes, const std::string& origin)
{
    Reader in(bytes, origin);
    in.need(4);
    if (!std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
        throw ArtifactError(origin + ": bad magic, not a tensor file");
    }
    (void)in.get_le<std::uint32_t>();
    const auto version = in.get_le<std::uint32_t>();
    if (version != kTensorFormatVersion) {
        throw ArtifactError(origin + ": unsupported tensor version " + std::to_string(version));
    }
    const auto rank = in.get_le<std::uint32_t>();
    if (rank == 0 || rank > 2) {
        throw ArtifactError(origin + ": unsupported tensor rank " + std::to_string(rank));
    }
    std::uint64_t rows = 1;
    std::uint64_t cols = in.get_le<std::uint64_t>();
    if (rank == 2) {
        rows = cols;
        cols = in.get_le<std::uint64_t>();
    }
    if (cols != 0 && rows > in.remaining() / 4 / cols) {
        throw ArtifactError(origin + ": payload shorter than declared shape");
    }
    const std::size_t count = rows * cols;
    if (in.remaining() != count * 4) {
        throw ArtifactError(origin + ": payload size does not match declared shape");
    }
    std::vector<float> values(count);
    for (auto& v : values) {
        v = std::bit_cast<float>(in.get_le<std::uint32_t>());
    }
    return DenseMatrix(rows, cols, std::move(values));
}

void save_tensor(const std::filesystem::path& path, const DenseMatrix& m)
{
    const auto bytes = encode_tensor(m);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw ArtifactError("cannot write tensor file " + path.string());
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw ArtifactError("short write to tensor file " + path.string());
    }
}

DenseMatrix load_tensor(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ArtifactError("missing tensor file " + path.string());
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_tensor(bytes, path.string());
}

} // namespace shears
