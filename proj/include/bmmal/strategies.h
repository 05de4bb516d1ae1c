#pragma once

#include "bmmal/attribution.h"
#include "bmmal/dataset.h"
#include "bmmal/embedding.h"
#include "bmmal/model.h"

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace bmmal {

enum class Strategy { Random, Entropy, CoreSet, Badge, Bmmal };

inline constexpr std::array<Strategy, 5> kAllStrategies{
    Strategy::Random, Strategy::Entropy, Strategy::CoreSet, Strategy::Badge, Strategy::Bmmal};

std::string_view to_string(Strategy s);
/// Accepts random, entropy, coreset, badge, bmmal. Throws ConfigError.
Strategy parse_strategy(std::string_view name);

struct QueryRequest {
    std::vector<std::size_t> unlabeled;
    std::vector<std::size_t> labeled;
    std::size_t budget = 0;
    std::uint64_t seed = 0;
    Strategy strategy = Strategy::Random;
    /// Number of sub-pools; must divide the budget.
    std::size_t split = 1;

    /// Throws ConfigError for a zero budget, a budget above the pool size, a
    /// split that does not divide the budget, or overlapping / duplicated
    /// index sets.
    void validate() const;
};

struct SelectionRecord {
    std::size_t index = 0;
    /// Entropy for entropy, cover distance for coreset, embedding norm for
    /// badge and bmmal, 0 for random.
    double score = 0.0;
    std::array<double, 2> contribution{0.5, 0.5};
    double rho = 0.0;
    std::array<double, 2> weights{1.0, 1.0};
};

struct QueryResult {
    std::vector<std::size_t> selected;
    /// Aligned with `selected`.
    std::vector<SelectionRecord> records;
    /// Per-candidate diagnostics for strategies that attribute the whole pool
    /// (bmmal), in pool order.
    std::vector<SelectionRecord> pool;
    /// Largest number of gradient-embedding rows held at once.
    std::size_t peak_embedding_rows = 0;
    std::size_t embedding_dim = 0;
    /// K-means++ ran out of D² mass and sampled uniformly.
    bool fallback_sampling = false;

    std::size_t peak_embedding_bytes() const { return peak_embedding_rows * embedding_dim * sizeof(double); }
};

struct KmeansppResult {
    /// Positions into the input list.
    std::vector<std::size_t> picks;
    bool fallback = false;
};

/// K-means++ seeding: first pick is the largest-norm point (lowest index on
/// ties), each later pick is drawn with probability proportional to squared
/// distance to the nearest chosen point. Falls back to uniform sampling
/// among unchosen points when all remaining mass is zero.
KmeansppResult kmeanspp_seed(std::span<const Eigen::VectorXd> points, std::size_t budget, std::uint64_t seed);

QueryResult select_random(const QueryRequest& req);
QueryResult select_entropy(const QueryRequest& req, const ModelParams& model, const Dataset& ds);
/// Greedy k-center over fused features with Euclidean distance.
QueryResult select_coreset(const QueryRequest& req, const ModelParams& model, const Dataset& ds);
QueryResult select_badge(const QueryRequest& req, const ModelParams& model, const Dataset& ds);
QueryResult select_bmmal(const QueryRequest& req, const ModelParams& model, const Dataset& ds);

using StrategyFn = std::function<QueryResult(const QueryRequest&)>;

/// Shuffles the pool with the request seed, cuts it into `split` contiguous
/// chunks and queries budget/split from each. split == 1 forwards the
/// request untouched.
QueryResult split_pool_query(const QueryRequest& req, const StrategyFn& strategy);

/// Validates, dispatches on req.strategy through split_pool_query and fills
/// contribution/rho/weights of every selected record.
QueryResult run_query(const QueryRequest& req, const ModelParams& model, const Dataset& ds);

struct SelectionLogContext {
    std::string setting;
    Strategy strategy = Strategy::Random;
    int repetition = 0;
    int round = 0;
};

/// One JSON object per line: setting, strategy, repetition, round, index,
/// score, phi_m1, phi_m2, rho.
void write_selection_log(std::ostream& out, const SelectionLogContext& ctx,
                         std::span<const SelectionRecord> records);

} // namespace bmmal
