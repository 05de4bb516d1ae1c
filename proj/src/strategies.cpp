#include "bmmal/strategies.h"

#include "bmmal/error.h"
#include "bmmal/random.h"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>
#include <unordered_set>

namespace bmmal {

std::string_view to_string(Strategy s) {
    switch (s) {
        case Strategy::Random: return "random";
        case Strategy::Entropy: return "entropy";
        case Strategy::CoreSet: return "coreset";
        case Strategy::Badge: return "badge";
        case Strategy::Bmmal: return "bmmal";
    }
    return "unknown";
}

Strategy parse_strategy(std::string_view name) {
    for (Strategy s : kAllStrategies)
        if (to_string(s) == name) return s;
    throw ConfigError("unknown strategy '" + std::string(name) + "' (expected random, entropy, coreset, badge or bmmal)");
}

void QueryRequest::validate() const {
    if (budget == 0) throw ConfigError("query budget must be positive");
    if (budget > unlabeled.size())
        throw ConfigError("query budget " + std::to_string(budget) + " exceeds unlabelled pool of " +
                          std::to_string(unlabeled.size()));
    if (split == 0) throw ConfigError("split must be positive");
    if (split > budget || budget % split != 0)
        throw ConfigError("split " + std::to_string(split) + " must divide the budget " + std::to_string(budget));
    std::unordered_set<std::size_t> pool(unlabeled.begin(), unlabeled.end());
    if (pool.size() != unlabeled.size()) throw ConfigError("unlabelled pool contains duplicates");
    for (auto i : labeled)
        if (pool.count(i)) throw ConfigError("index " + std::to_string(i) + " is both labelled and unlabelled");
}

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void check_indices(const QueryRequest& req, const Dataset& ds) {
    for (auto i : req.unlabeled)
        if (i >= ds.size()) throw ConfigError("unlabelled index out of range");
    for (auto i : req.labeled)
        if (i >= ds.size()) throw ConfigError("labelled index out of range");
}

QueryResult from_positions(const QueryRequest& req, const std::vector<std::size_t>& positions,
                           const std::vector<double>& scores) {
    QueryResult r;
    r.selected.reserve(positions.size());
    r.records.reserve(positions.size());
    for (auto pos : positions) {
        r.selected.push_back(req.unlabeled[pos]);
        SelectionRecord rec;
        rec.index = req.unlabeled[pos];
        rec.score = scores.empty() ? 0.0 : scores[pos];
        r.records.push_back(rec);
    }
    return r;
}

void fill_attribution(SelectionRecord& rec, const AttributionResult& a) {
    rec.contribution = a.contribution;
    rec.rho = a.rho;
    rec.weights = a.weights;
}

KmeansppResult kmeanspp_rows(const RowMatrix& points, std::size_t budget, std::uint64_t seed) {
    const auto n = static_cast<std::size_t>(points.rows());
    if (budget > n) throw ConfigError("K-means++ budget exceeds the number of points");
    KmeansppResult out;
    if (budget == 0) return out;

    std::size_t first = 0;
    double best = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double sq = points.row(static_cast<Eigen::Index>(i)).squaredNorm();
        if (sq > best) {
            best = sq;
            first = i;
        }
    }

    std::vector<char> chosen(n, 0);
    std::vector<double> min_d2(n);
    auto add_center = [&](std::size_t c) {
        chosen[c] = 1;
        out.picks.push_back(c);
        for (std::size_t i = 0; i < n; ++i) {
            if (chosen[i]) {
                min_d2[i] = 0.0;
                continue;
            }
            const double d2 = (points.row(static_cast<Eigen::Index>(i)) - points.row(static_cast<Eigen::Index>(c))).squaredNorm();
            if (out.picks.size() == 1 || d2 < min_d2[i]) min_d2[i] = d2;
        }
    };
    add_center(first);

    Rng rng(seed);
    while (out.picks.size() < budget) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            if (!chosen[i]) total += min_d2[i];

        std::size_t pick = n;
        if (total > 0.0) {
            const double u = std::uniform_real_distribution<double>(0.0, total)(rng);
            double cum = 0.0;
            std::size_t last_positive = n;
            for (std::size_t i = 0; i < n; ++i) {
                if (chosen[i] || min_d2[i] <= 0.0) continue;
                last_positive = i;
                cum += min_d2[i];
                if (cum > u) {
                    pick = i;
                    break;
                }
            }
            if (pick == n) pick = last_positive;
        } else {
            out.fallback = true;
            const std::size_t remaining = n - out.picks.size();
            auto k = std::uniform_int_distribution<std::size_t>(0, remaining - 1)(rng);
            for (std::size_t i = 0; i < n; ++i) {
                if (chosen[i]) continue;
                if (k-- == 0) {
                    pick = i;
                    break;
                }
            }
        }
        add_center(pick);
    }
    return out;
}

QueryResult select_by_kmeanspp(const QueryRequest& req, const std::vector<GradientEmbedding>& embeddings) {
    const std::size_t dim = embeddings.empty() ? 0 : static_cast<std::size_t>(embeddings.front().values.size());
    RowMatrix points(static_cast<Eigen::Index>(embeddings.size()), static_cast<Eigen::Index>(dim));
    std::vector<double> norms;
    norms.reserve(embeddings.size());
    for (std::size_t i = 0; i < embeddings.size(); ++i) {
        points.row(static_cast<Eigen::Index>(i)) = embeddings[i].values.transpose();
        norms.push_back(embeddings[i].norm);
    }
    KmeansppResult km = kmeanspp_rows(points, req.budget, req.seed);
    QueryResult r = from_positions(req, km.picks, norms);
    r.fallback_sampling = km.fallback;
    r.peak_embedding_rows = embeddings.size();
    r.embedding_dim = dim;
    return r;
}

} // namespace

KmeansppResult kmeanspp_seed(std::span<const Eigen::VectorXd> points, std::size_t budget, std::uint64_t seed) {
    const std::size_t dim = points.empty() ? 0 : static_cast<std::size_t>(points.front().size());
    RowMatrix packed(static_cast<Eigen::Index>(points.size()), static_cast<Eigen::Index>(dim));
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (static_cast<std::size_t>(points[i].size()) != dim) throw DimensionError("K-means++ points differ in dimension");
        packed.row(static_cast<Eigen::Index>(i)) = points[i].transpose();
    }
    return kmeanspp_rows(packed, budget, seed);
}

QueryResult select_random(const QueryRequest& req) {
    if (req.budget > req.unlabeled.size()) throw ConfigError("query budget exceeds unlabelled pool");
    std::vector<std::size_t> positions(req.unlabeled.size());
    std::iota(positions.begin(), positions.end(), std::size_t{0});
    Rng rng(req.seed);
    std::shuffle(positions.begin(), positions.end(), rng);
    positions.resize(req.budget);
    return from_positions(req, positions, {});
}

QueryResult select_entropy(const QueryRequest& req, const ModelParams& model, const Dataset& ds) {
    if (req.budget > req.unlabeled.size()) throw ConfigError("query budget exceeds unlabelled pool");
    check_indices(req, ds);
    std::vector<double> entropy(req.unlabeled.size());
    for (std::size_t pos = 0; pos < req.unlabeled.size(); ++pos) {
        const Eigen::VectorXd p = forward(model, ds.samples[req.unlabeled[pos]]).p_mm;
        double h = 0.0;
        for (Eigen::Index k = 0; k < p.size(); ++k)
            if (p[k] > 0.0) h -= p[k] * std::log(p[k]);
        entropy[pos] = h;
    }
    std::vector<std::size_t> positions(req.unlabeled.size());
    std::iota(positions.begin(), positions.end(), std::size_t{0});
    std::stable_sort(positions.begin(), positions.end(), [&](std::size_t a, std::size_t b) {
        if (entropy[a] != entropy[b]) return entropy[a] > entropy[b];
        return req.unlabeled[a] < req.unlabeled[b];
    });
    positions.resize(req.budget);
    return from_positions(req, positions, entropy);
}

QueryResult select_coreset(const QueryRequest& req, const ModelParams& model, const Dataset& ds) {
    if (req.budget > req.unlabeled.size()) throw ConfigError("query budget exceeds unlabelled pool");
    check_indices(req, ds);
    auto feature = [&](std::size_t idx) {
        Features z = encode(model, ds.samples[idx]);
        return fuse(model, z.z_m1, z.z_m2);
    };
    const std::size_t n = req.unlabeled.size();
    std::vector<Eigen::VectorXd> pool;
    pool.reserve(n);
    for (auto idx : req.unlabeled) pool.push_back(feature(idx));

    constexpr double kInf = std::numeric_limits<double>::infinity();
    std::vector<double> min_d2(n, kInf);
    for (auto idx : req.labeled) {
        const Eigen::VectorXd c = feature(idx);
        for (std::size_t i = 0; i < n; ++i) min_d2[i] = std::min(min_d2[i], (pool[i] - c).squaredNorm());
    }

    std::vector<char> chosen(n, 0);
    std::vector<std::size_t> positions;
    std::vector<double> scores(n, 0.0);
    auto cover = [&](std::size_t c) {
        chosen[c] = 1;
        positions.push_back(c);
        for (std::size_t i = 0; i < n; ++i) min_d2[i] = std::min(min_d2[i], (pool[i] - pool[c]).squaredNorm());
    };

    if (req.labeled.empty()) {
        std::size_t first = 0;
        for (std::size_t i = 1; i < n; ++i)
            if (pool[i].squaredNorm() > pool[first].squaredNorm()) first = i;
        scores[first] = pool[first].norm();
        cover(first);
    }
    while (positions.size() < req.budget) {
        std::size_t best = n;
        for (std::size_t i = 0; i < n; ++i) {
            if (chosen[i]) continue;
            if (best == n || min_d2[i] > min_d2[best]) best = i;
        }
        scores[best] = std::sqrt(min_d2[best]);
        cover(best);
    }
    return from_positions(req, positions, scores);
}

QueryResult select_badge(const QueryRequest& req, const ModelParams& model, const Dataset& ds) {
    if (req.budget > req.unlabeled.size()) throw ConfigError("query budget exceeds unlabelled pool");
    check_indices(req, ds);
    std::vector<GradientEmbedding> embeddings;
    embeddings.reserve(req.unlabeled.size());
    for (auto idx : req.unlabeled) embeddings.push_back(gradient_embedding(model, ds.samples[idx], idx));
    return select_by_kmeanspp(req, embeddings);
}

QueryResult select_bmmal(const QueryRequest& req, const ModelParams& model, const Dataset& ds) {
    if (req.budget > req.unlabeled.size()) throw ConfigError("query budget exceeds unlabelled pool");
    check_indices(req, ds);
    std::vector<GradientEmbedding> embeddings;
    std::vector<SelectionRecord> pool;
    embeddings.reserve(req.unlabeled.size());
    pool.reserve(req.unlabeled.size());
    for (auto idx : req.unlabeled) {
        ModulatedEmbedding m = modulated_embedding(model, ds.samples[idx], idx);
        SelectionRecord rec;
        rec.index = idx;
        rec.score = m.embedding.norm;
        fill_attribution(rec, m.attribution);
        pool.push_back(rec);
        embeddings.push_back(std::move(m.embedding));
    }
    QueryResult r = select_by_kmeanspp(req, embeddings);
    // Positions in `pool` match positions in req.unlabeled.
    for (auto& rec : r.records) {
        auto pos = static_cast<std::size_t>(
            std::find(req.unlabeled.begin(), req.unlabeled.end(), rec.index) - req.unlabeled.begin());
        rec = pool[pos];
    }
    r.pool = std::move(pool);
    return r;
}

QueryResult split_pool_query(const QueryRequest& req, const StrategyFn& strategy) {
    if (req.split == 0 || req.split > req.budget || req.budget % req.split != 0)
        throw ConfigError("split " + std::to_string(req.split) + " must divide the budget " + std::to_string(req.budget));
    if (req.split == 1) return strategy(req);

    std::vector<std::size_t> shuffled = req.unlabeled;
    Rng rng(derive_seed(req.seed, {0x5117u}));
    std::shuffle(shuffled.begin(), shuffled.end(), rng);

    const std::size_t chunks = req.split;
    const std::size_t per_chunk = req.budget / chunks;
    const std::size_t base = shuffled.size() / chunks;
    const std::size_t extra = shuffled.size() % chunks;

    QueryResult merged;
    std::size_t offset = 0;
    for (std::size_t c = 0; c < chunks; ++c) {
        const std::size_t len = base + (c < extra ? 1 : 0);
        if (len < per_chunk)
            throw ConfigError("sub-pool " + std::to_string(c) + " has " + std::to_string(len) +
                              " samples, fewer than its budget " + std::to_string(per_chunk));
        QueryRequest sub;
        sub.unlabeled.assign(shuffled.begin() + static_cast<std::ptrdiff_t>(offset),
                             shuffled.begin() + static_cast<std::ptrdiff_t>(offset + len));
        std::sort(sub.unlabeled.begin(), sub.unlabeled.end());
        sub.labeled = req.labeled;
        sub.budget = per_chunk;
        sub.seed = derive_seed(req.seed, {c});
        sub.strategy = req.strategy;
        sub.split = 1;
        offset += len;

        QueryResult part = strategy(sub);
        merged.selected.insert(merged.selected.end(), part.selected.begin(), part.selected.end());
        merged.records.insert(merged.records.end(), part.records.begin(), part.records.end());
        merged.pool.insert(merged.pool.end(), part.pool.begin(), part.pool.end());
        merged.peak_embedding_rows = std::max(merged.peak_embedding_rows, part.peak_embedding_rows);
        merged.embedding_dim = std::max(merged.embedding_dim, part.embedding_dim);
        merged.fallback_sampling = merged.fallback_sampling || part.fallback_sampling;
    }
    return merged;
}

QueryResult run_query(const QueryRequest& req, const ModelParams& model, const Dataset& ds) {
    req.validate();
    check_indices(req, ds);
    StrategyFn fn;
    switch (req.strategy) {
        case Strategy::Random: fn = [](const QueryRequest& r) { return select_random(r); }; break;
        case Strategy::Entropy: fn = [&](const QueryRequest& r) { return select_entropy(r, model, ds); }; break;
        case Strategy::CoreSet: fn = [&](const QueryRequest& r) { return select_coreset(r, model, ds); }; break;
        case Strategy::Badge: fn = [&](const QueryRequest& r) { return select_badge(r, model, ds); }; break;
        case Strategy::Bmmal: fn = [&](const QueryRequest& r) { return select_bmmal(r, model, ds); }; break;
    }
    QueryResult r = split_pool_query(req, fn);
    for (auto& rec : r.records) fill_attribution(rec, attribute(model, ds.samples[rec.index]));
    return r;
}

void write_selection_log(std::ostream& out, const SelectionLogContext& ctx, std::span<const SelectionRecord> records) {
    for (const auto& rec : records) {
        nlohmann::ordered_json j;
        j["setting"] = ctx.setting;
        j["strategy"] = to_string(ctx.strategy);
        j["repetition"] = ctx.repetition;
        j["round"] = ctx.round;
        j["index"] = rec.index;
        j["score"] = rec.score;
        j["phi_m1"] = rec.contribution[0];
        j["phi_m2"] = rec.contribution[1];
        j["rho"] = rec.rho;
        out << j.dump() << '\n';
    }
}

} // namespace bmmal
