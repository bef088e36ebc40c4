// Copyright 2026 The Shears Authors
// SPDX-License-Identifier: Apache-2.0

#include "shears/search.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "shears/adapters.hpp"

namespace shears {

SearchSpace::SearchSpace(std::vector<std::pair<std::string, std::vector<std::size_t>>> modules)
    : modules_(std::move(modules))
{
    if (modules_.empty()) {
        throw std::invalid_argument("search space has no modules");
    }
    for (const auto& [name, choices] : modules_) {
        if (choices.empty()) {
            throw std::invalid_argument("search space module '" + name + "' has no choices");
        }
    }
}

SearchSpace SearchSpace::from_adapter(const SuperAdapter& adapter)
{
    std::vector<std::pair<std::string, std::vector<std::size_t>>> mods;
    for (const auto& m : adapter.modules) {
        mods.emplace_back(m.name, m.rank_choices);
    }
    // SubAdapterConfig is name-ordered; keep the space in the same order.
    std::sort(mods.begin(), mods.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    return SearchSpace(std::move(mods));
}

std::size_t SearchSpace::size() const noexcept
{
    std::size_t total = 1;
    for (const auto& m : modules_) {
        if (total > std::numeric_limits<std::size_t>::max() / m.second.size()) {
            return std::numeric_limits<std::size_t>::max();
        }
        total *= m.second.size();
    }
    return total;
}

bool SearchSpace::contains(const SubAdapterConfig& config) const
{
    if (config.size() != modules_.size()) {
        return false;
    }
    for (const auto& [name, choices] : modules_) {
        const auto it = config.find(name);
        if (it == config.end() || std::find(choices.begin(), choices.end(), it->second) == choices.end()) {
            return false;
        }
    }
    return true;
}

std::size_t SearchSpace::index_of(std::size_t module, std::size_t rank) const
{
    const auto& choices = modules_.at(module).second;
    const auto it = std::find(choices.begin(), choices.end(), rank);
    if (it == choices.end()) {
        throw std::invalid_argument("rank " + std::to_string(rank) + " is not a choice for module '" +
                                    modules_[module].first + "'");
    }
    return static_cast<std::size_t>(it - choices.begin());
}

std::vector<SubAdapterConfig> SearchSpace::enumerate() const
{
    std::vector<SubAdapterConfig> out;
    std::vector<std::size_t> idx(modules_.size(), 0);
    while (true) {
        SubAdapterConfig c;
        for (std::size_t m = 0; m < modules_.size(); ++m) {
            c[modules_[m].first] = modules_[m].second[idx[m]];
        }
        out.push_back(std::move(c));
        std::size_t m = modules_.size();
        while (m-- > 0) {
            if (++idx[m] < modules_[m].second.size()) {
                break;
            }
            idx[m] = 0;
        }
        if (m == static_cast<std::size_t>(-1)) {
            return out;
        }
    }
}

std::string fingerprint(const SubAdapterConfig& config)
{
    std::string fp;
    for (const auto& [name, rank] : config) {
        if (!fp.empty()) {
            fp.push_back(';');
        }
        fp += name;
        fp.push_back('=');
        fp += std::to_string(rank);
    }
    return fp;
}

EvalCache::EvalCache(Evaluator evaluator) : evaluator_(std::move(evaluator)) {}

Objectives EvalCache::operator()(const SubAdapterConfig& config)
{
    const auto fp = fingerprint(config);
    if (const auto it = entries_.find(fp); it != entries_.end()) {
        return it->second.second;
    }
    Objectives obj;
    try {
        obj = evaluator_(config);
    } catch (const std::exception& e) {
        throw std::runtime_error("evaluation failed for config {" + fp + "}: " + e.what());
    }
    ++invocations_;
    entries_.emplace(fp, std::make_pair(config, obj));
    return obj;
}

bool EvalCache::contains(const SubAdapterConfig& config) const
{
    return entries_.contains(fingerprint(config));
}

SubAdapterConfig heuristic_config(const SearchSpace& space)
{
    SubAdapterConfig c;
    for (const auto& [name, choices] : space.modules()) {
        c[name] = choices[choices.size() / 2];
    }
    return c;
}

std::vector<SubAdapterConfig> neighbors(const SubAdapterConfig& config, const SearchSpace& space)
{
    if (!space.contains(config)) {
        throw std::invalid_argument("neighbors: config {" + fingerprint(config) + "} is not in the search space");
    }
    std::vector<SubAdapterConfig> out;
    for (std::size_t m = 0; m < space.module_count(); ++m) {
        const auto& [name, choices] = space.modules()[m];
        const auto idx = space.index_of(m, config.at(name));
        if (idx + 1 < choices.size()) {
            auto down = config;
            down[name] = choices[idx + 1];
            out.push_back(std::move(down));
        }
        if (idx > 0) {
            auto up = config;
            up[name] = choices[idx - 1];
            out.push_back(std::move(up));
        }
    }
    return out;
}

HillClimbResult hill_climb(EvalCache& cache, const SubAdapterConfig& start, const SearchSpace& space,
                           std::size_t budget)
{
    if (budget < 1) {
        throw std::invalid_argument("hill_climb: budget must be >= 1");
    }
    if (!space.contains(start)) {
        throw std::invalid_argument("hill_climb: start config is not in the search space");
    }
    const std::size_t base_calls = cache.invocations();
    auto spent = [&] { return cache.invocations() - base_calls; };

    HillClimbResult result;
    result.best = start;
    result.best_objectives = cache(start);
    result.trace.push_back({start, result.best_objectives});

    while (true) {
        std::optional<Candidate> step;
        for (const auto& nb : neighbors(result.best, space)) {
            if (!cache.contains(nb) && spent() >= budget) {
                continue;
            }
            const auto obj = cache(nb);
            const double bar = step ? step->objectives->metric : result.best_objectives.metric;
            if (obj.metric > bar) {
                step = Candidate{nb, obj};
            }
        }
        if (!step) {
            break;
        }
        result.best = step->config;
        result.best_objectives = *step->objectives;
        result.trace.push_back(std::move(*step));
    }
    result.evaluations = spent();
    return result;
}

bool dominates(const Objectives& a, const Objectives& b) noexcept
{
    const bool no_worse = a.metric >= b.metric && a.params <= b.params;
    const bool better = a.metric > b.metric || a.params < b.params;
    return no_worse && better;
}

std::vector<std::vector<std::size_t>> nondominated_sort(const std::vector<Candidate>& candidates)
{
    const std::size_t n = candidates.size();
    for (const auto& c : candidates) {
        if (!c.evaluated()) {
            throw std::invalid_argument("nondominated_sort: unevaluated candidate {" + fingerprint(c.config) + "}");
        }
    }
    std::vector<std::vector<std::size_t>> dominated(n);
    std::vector<std::size_t> dom_count(n, 0);
    std::vector<std::vector<std::size_t>> fronts;
    std::vector<std::size_t> current;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) {
                continue;
            }
            if (dominates(*candidates[i].objectives, *candidates[j].objectives)) {
                dominated[i].push_back(j);
            } else if (dominates(*candidates[j].objectives, *candidates[i].objectives)) {
                ++dom_count[i];
            }
        }
        if (dom_count[i] == 0) {
            current.push_back(i);
        }
    }
    while (!current.empty()) {
        std::vector<std::size_t> next;
        for (auto i : current) {
            for (auto j : dominated[i]) {
                if (--dom_count[j] == 0) {
                    next.push_back(j);
                }
            }
        }
        std::sort(next.begin(), next.end());
        fronts.push_back(std::move(current));
        current = std::move(next);
    }
    return fronts;
}

std::vector<double> crowding_distance(const std::vector<Objectives>& front)
{
    const std::size_t n = front.size();
    std::vector<double> dist(n, 0.0);
    if (n <= 2) {
        std::fill(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
        return dist;
    }
    auto accumulate = [&](auto key) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return key(front[a]) < key(front[b]); });
        const double lo = key(front[order.front()]);
        const double hi = key(front[order.back()]);
        dist[order.front()] = std::numeric_limits<double>::infinity();
        dist[order.back()] = std::numeric_limits<double>::infinity();
        if (hi <= lo) {
            return;
        }
        for (std::size_t i = 1; i + 1 < n; ++i) {
            dist[order[i]] += (key(front[order[i + 1]]) - key(front[order[i - 1]])) / (hi - lo);
        }
    };
    accumulate([](const Objectives& o) { return o.metric; });
    accumulate([](const Objectives& o) { return static_cast<double>(o.params); });
    return dist;
}

namespace {

struct Ranked {
    Candidate cand;
    std::string fp;
    std::size_t rank = 0;
    double diversity = 0.0;
};

/// Front rank and diversity for every member, in place.
void assign_rank_and_diversity(std::vector<Ranked>& pop, const std::vector<ReferencePoint>& refs)
{
    std::vector<Candidate> cands;
    cands.reserve(pop.size());
    for (const auto& r : pop) {
        cands.push_back(r.cand);
    }
    const auto fronts = nondominated_sort(cands);

    double m_lo = std::numeric_limits<double>::infinity();
    double m_hi = -m_lo;
    double p_lo = m_lo;
    double p_hi = -m_lo;
    for (const auto& r : pop) {
        m_lo = std::min(m_lo, r.cand.objectives->metric);
        m_hi = std::max(m_hi, r.cand.objectives->metric);
        p_lo = std::min(p_lo, static_cast<double>(r.cand.objectives->params));
        p_hi = std::max(p_hi, static_cast<double>(r.cand.objectives->params));
    }
    const double m_range = m_hi > m_lo ? m_hi - m_lo : 1.0;
    const double p_range = p_hi > p_lo ? p_hi - p_lo : 1.0;

    for (std::size_t f = 0; f < fronts.size(); ++f) {
        std::vector<Objectives> objs;
        for (auto i : fronts[f]) {
            pop[i].rank = f;
            objs.push_back(*pop[i].cand.objectives);
        }
        if (refs.empty()) {
            const auto cd = crowding_distance(objs);
            for (std::size_t k = 0; k < fronts[f].size(); ++k) {
                pop[fronts[f][k]].diversity = cd[k];
            }
            continue;
        }
        for (auto i : fronts[f]) {
            const auto& o = *pop[i].cand.objectives;
            double nearest = std::numeric_limits<double>::infinity();
            for (const auto& ref : refs) {
                const double dm = (o.metric - ref.metric) / m_range;
                const double dp = (static_cast<double>(o.params) - ref.params) / p_range;
                nearest = std::min(nearest, std::sqrt(dm * dm + dp * dp));
            }
            pop[i].diversity = -nearest;
        }
    }
}

bool better(const Ranked& a, const Ranked& b)
{
    if (a.rank != b.rank) {
        return a.rank < b.rank;
    }
    return a.diversity > b.diversity;
}

SubAdapterConfig random_config(const SearchSpace& space, Rng& rng)
{
    SubAdapterConfig c;
    for (const auto& [name, choices] : space.modules()) {
        c[name] = choices[rng.uniform_index(choices.size())];
    }
    return c;
}

Ranked make_member(EvalCache& cache, SubAdapterConfig config, std::map<std::string, Candidate>& visited)
{
    Ranked r;
    r.fp = fingerprint(config);
    const auto obj = cache(config);
    r.cand = Candidate{std::move(config), obj};
    visited.emplace(r.fp, r.cand);
    return r;
}

} // namespace

EvolutionResult evolutionary_search(EvalCache& cache, const SearchSpace& space, const EvolutionOptions& options,
                                    Rng& rng)
{
    if (options.pop_size < 4 || options.pop_size % 2 != 0) {
        throw std::invalid_argument("evolutionary_search: pop_size must be even and >= 4");
    }
    if (options.generations < 1) {
        throw std::invalid_argument("evolutionary_search: generations must be >= 1");
    }
    const std::size_t base_calls = cache.invocations();
    const std::size_t n_modules = space.module_count();
    const std::size_t pop_size = options.pop_size;

    SubAdapterConfig maximal;
    for (const auto& [name, choices] : space.modules()) {
        maximal[name] = choices.front();
    }

    std::map<std::string, Candidate> visited;
    std::vector<Ranked> pop;
    std::map<std::string, bool> seen;
    auto push_initial = [&](SubAdapterConfig c) {
        auto member = make_member(cache, std::move(c), visited);
        seen[member.fp] = true;
        pop.push_back(std::move(member));
    };
    push_initial(heuristic_config(space));
    if (!seen.contains(fingerprint(maximal))) {
        push_initial(maximal);
    }
    // Prefer distinct random members; fall back to repeats once the space is exhausted.
    std::size_t attempts = 0;
    while (pop.size() < pop_size) {
        auto c = random_config(space, rng);
        if (seen.contains(fingerprint(c)) && attempts++ < 20 * pop_size) {
            continue;
        }
        push_initial(std::move(c));
    }
    assign_rank_and_diversity(pop, options.reference_points);

    EvolutionResult result;
    auto record = [&] {
        std::vector<std::string> fps;
        for (const auto& m : pop) {
            fps.push_back(m.fp);
        }
        result.history.push_back(std::move(fps));
    };
    record();

    auto tournament = [&]() -> const Ranked& {
        const auto& a = pop[rng.uniform_index(pop.size())];
        const auto& b = pop[rng.uniform_index(pop.size())];
        return better(b, a) ? b : a;
    };
    auto mutate = [&](SubAdapterConfig& c) {
        for (std::size_t m = 0; m < n_modules; ++m) {
            if (rng.uniform() >= 1.0 / static_cast<double>(n_modules)) {
                continue;
            }
            const auto& [name, choices] = space.modules()[m];
            if (choices.size() < 2) {
                continue;
            }
            const auto idx = space.index_of(m, c[name]);
            std::size_t next = idx;
            if (idx == 0) {
                next = 1;
            } else if (idx + 1 == choices.size()) {
                next = idx - 1;
            } else {
                next = rng.uniform() < 0.5 ? idx - 1 : idx + 1;
            }
            c[name] = choices[next];
        }
    };

    for (std::size_t gen = 0; gen < options.generations; ++gen) {
        std::vector<Ranked> offspring;
        while (offspring.size() < pop_size) {
            const auto& p1 = tournament().cand.config;
            const auto& p2 = tournament().cand.config;
            SubAdapterConfig c1;
            SubAdapterConfig c2;
            for (const auto& [name, choices] : space.modules()) {
                const bool swap = rng.uniform() < 0.5;
                c1[name] = swap ? p2.at(name) : p1.at(name);
                c2[name] = swap ? p1.at(name) : p2.at(name);
            }
            mutate(c1);
            mutate(c2);
            offspring.push_back(make_member(cache, std::move(c1), visited));
            offspring.push_back(make_member(cache, std::move(c2), visited));
        }

        // Distinct configs first, fingerprint order; repeats only fill a shortfall.
        std::vector<Ranked> combined;
        std::vector<Ranked> repeats;
        std::map<std::string, bool> taken;
        for (auto* src : {&pop, &offspring}) {
            for (auto& m : *src) {
                if (taken.contains(m.fp)) {
                    repeats.push_back(std::move(m));
                } else {
                    taken[m.fp] = true;
                    combined.push_back(std::move(m));
                }
            }
        }
        std::stable_sort(combined.begin(), combined.end(), [](const auto& a, const auto& b) { return a.fp < b.fp; });
        std::stable_sort(repeats.begin(), repeats.end(), [](const auto& a, const auto& b) { return a.fp < b.fp; });
        assign_rank_and_diversity(combined, options.reference_points);
        std::stable_sort(combined.begin(), combined.end(), better);
        if (combined.size() < pop_size) {
            assign_rank_and_diversity(repeats, options.reference_points);
            std::stable_sort(repeats.begin(), repeats.end(), better);
            for (auto& r : repeats) {
                if (combined.size() >= pop_size) {
                    break;
                }
                combined.push_back(std::move(r));
            }
        }
        combined.resize(pop_size);
        pop = std::move(combined);
        assign_rank_and_diversity(pop, options.reference_points);
        record();
    }

    std::map<std::string, bool> in_front;
    for (const auto& m : pop) {
        result.final_population.push_back(m.cand);
        if (m.rank == 0 && !in_front.contains(m.fp)) {
            in_front[m.fp] = true;
            result.front.push_back(m.cand);
        }
    }
    std::sort(result.front.begin(), result.front.end(),
              [](const auto& a, const auto& b) { return fingerprint(a.config) < fingerprint(b.config); });

    // Best by metric over every config this search visited; fewer params, then fingerprint, break ties.
    const Candidate* best = nullptr;
    for (const auto& [fp, cand] : visited) {
        const auto& o = *cand.objectives;
        if (best == nullptr || o.metric > best->objectives->metric ||
            (o.metric == best->objectives->metric && o.params < best->objectives->params)) {
            best = &cand;
        }
    }
    result.best = *best;
    result.evaluations = cache.invocations() - base_calls;
    return result;
}

} // namespace shears
