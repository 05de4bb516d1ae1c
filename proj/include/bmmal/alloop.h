#pragma once

#include "bmmal/dataset.h"
#include "bmmal/eval.h"
#include "bmmal/model.h"
#include "bmmal/strategies.h"

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace bmmal {

struct FileSource {
    std::filesystem::path path;
    FeatureSchema schema;
};

using DataSource = std::variant<SynthConfig, FileSource>;

Dataset load_source(const DataSource& source);

struct ExperimentConfig {
    std::string setting = "default";
    DataSource data = SynthConfig{};
    Strategy strategy = Strategy::Random;
    std::size_t initial_budget = 50;
    std::size_t round_budget = 50;
    int rounds = 5;
    TrainConfig train;
    Fusion fusion = Fusion::Concat;
    int hidden_m1 = 0;
    int hidden_m2 = 0;
    std::size_t split = 1;
    std::uint64_t master_seed = 0;

    void validate() const;
    /// Also checks the labelling budget against the train split size.
    void validate(const Dataset& ds) const;
};

struct RoundReport {
    int round = 0;
    std::size_t labeled_size = 0;
    Accuracy accuracy;
    /// Mean test-split contribution per modality.
    std::array<double, 2> mean_contribution{0.5, 0.5};
    DominatedSubsetStats subset_stats;
    /// Indices added to the labelled pool for this round (round 0: the random
    /// seed pool).
    std::vector<std::size_t> selected;
    std::vector<SelectionRecord> selection;
    double wall_ms = 0.0;
};

struct RunRecord {
    std::string setting;
    Strategy strategy = Strategy::Random;
    int repetition = 0;
    std::vector<RoundReport> rounds;
    ModelParams final_model;
};

/// Round 0 labels a random seed pool; every later round queries the
/// strategy with the previous round's model, labels the batch, retrains
/// from a fresh initialisation and evaluates on the test split. All seeds
/// derive from (master_seed, repetition, round); none depend on the
/// strategy, so strategies share their round-0 pool.
RunRecord run_experiment(const ExperimentConfig& cfg, const Dataset& ds, int repetition = 0);
RunRecord run_experiment(const ExperimentConfig& cfg, int repetition = 0);

struct RoundAggregate {
    int round = 0;
    std::size_t labeled = 0;
    std::array<double, 3> accuracy_mean{};
    std::array<double, 3> accuracy_std{};
    std::array<double, 2> contribution_mean{};
    std::array<double, 2> contribution_std{};
};

struct ConfigSummary {
    std::string setting;
    Strategy strategy = Strategy::Random;
    std::vector<RoundAggregate> rounds;
};

struct ReportBundle {
    /// Ordered by config, then repetition.
    std::vector<RunRecord> runs;
    std::vector<ConfigSummary> summaries;
};

/// Runs every config `repetitions` times; `threads` > 1 fans the runs over
/// worker threads without changing the result.
ReportBundle run_suite(std::span<const ExperimentConfig> cfgs, int repetitions, int threads = 1);

std::vector<MetricRow> metric_rows(const ReportBundle& bundle);

/// Mean/std (sample std, 0 for a single run) per round over the runs.
ConfigSummary summarize(std::span<const RunRecord> runs);

} // namespace bmmal
