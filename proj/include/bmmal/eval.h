#pragma once

#include "bmmal/attribution.h"
#include "bmmal/dataset.h"
#include "bmmal/model.h"

#include <array>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace bmmal {

/// Mean contribution of each modality over `indices`.
std::array<double, 2> mean_contribution(const ModelParams& model, const Dataset& ds,
                                        std::span<const std::size_t> indices);
std::array<double, 2> mean_contribution(std::span<const AttributionResult> attributions);

struct DominatedSubset {
    std::size_t count = 0;
    /// Mean weight of the non-dominant modality (1 - rho). Absent when the
    /// subset is empty.
    std::optional<double> mean_weight;
    std::optional<double> mean_rho;
};

/// Partition by dominant modality (ties to modality 1). subsets[i] holds the
/// samples dominated by modality i+1.
struct DominatedSubsetStats {
    std::array<DominatedSubset, 2> subsets;
    /// Dataset-level mean contribution; the larger one marks the stronger
    /// modality.
    std::array<double, 2> mean_contribution{0.5, 0.5};

    int stronger() const { return mean_contribution[1] > mean_contribution[0] ? 1 : 0; }
};

DominatedSubsetStats dominated_subset_stats(std::span<const AttributionResult> attributions);

struct TTestResult {
    double t = 0.0;
    double df = 0.0;
    double critical = 0.0;
    bool significant = false;
};

/// Two-sided Welch test. Both samples need at least two values. When both
/// variances vanish, equal means give t = 0 and distinct means give an
/// infinite t that is always significant.
TTestResult welch_ttest(std::span<const double> a, std::span<const double> b, double confidence = 0.9);

/// values[repetition][query round - 1] for one strategy in one setting.
struct StrategySeries {
    std::string strategy;
    std::vector<std::vector<double>> values;
};

struct SettingSeries {
    std::string setting;
    std::vector<StrategySeries> strategies;
};

struct PairwiseMatrix {
    std::vector<std::string> strategies;
    /// wins[i][j]: accumulated 1/L per round where strategy i significantly
    /// beats strategy j.
    std::vector<std::vector<double>> wins;
    /// Mean of each column over the other strategies; lower is better.
    std::vector<double> column_average;
    std::size_t settings = 0;
    double confidence = 0.9;
};

/// Throws ConfigError when strategies in one setting disagree on the round
/// count or when a strategy has fewer than two repetitions.
PairwiseMatrix pairwise_matrix(std::span<const SettingSeries> settings, double confidence = 0.9);

/// strategy header line, one row per strategy and a final `average` row.
void write_pairwise_matrix(std::ostream& out, const PairwiseMatrix& m);

struct ClassDelta {
    int label = 0;
    std::size_t count = 0;
    double mm = 0.0;
    double m1 = 0.0;
    double m2 = 0.0;
};

struct ClasswiseComparison {
    /// Sorted by multimodal delta, largest improvement first.
    std::vector<ClassDelta> deltas;
    std::vector<int> absent_classes;
};

/// Per-class accuracy of model_a minus model_b.
ClasswiseComparison classwise_delta(const ModelParams& model_a, const ModelParams& model_b, const Dataset& ds,
                                    std::span<const std::size_t> indices);
ClasswiseComparison classwise_delta(const ModelParams& model_a, const ModelParams& model_b, const Dataset& ds);

/// One row of the metrics CSV.
struct MetricRow {
    std::string setting;
    std::string strategy;
    int repetition = 0;
    int round = 0;
    std::size_t labeled = 0;
    double mm_top1 = 0.0;
    double m1_top1 = 0.0;
    double m2_top1 = 0.0;
    double phi_m1 = 0.0;
    double phi_m2 = 0.0;
};

inline constexpr const char* kMetricsHeader =
    "setting,strategy,repetition,round,labeled,mm_top1,m1_top1,m2_top1,phi_m1,phi_m2";

void write_metrics_csv(std::ostream& out, std::span<const MetricRow> rows);
std::vector<MetricRow> read_metrics_csv(const std::filesystem::path& path);

enum class Metric { Multimodal, Modality1, Modality2 };
Metric parse_metric(std::string_view name);
std::string_view to_string(Metric metric);

/// Groups rows by setting then strategy (first-appearance order) into
/// repetition x round series of the chosen metric. Round 0 rows are skipped,
/// so values[rep][t - 1] holds query round t.
std::vector<SettingSeries> series_from_rows(std::span<const MetricRow> rows, Metric metric);

} // namespace bmmal
