#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

namespace bmmal {

struct MultimodalSample {
    Eigen::VectorXd x_m1;
    Eigen::VectorXd x_m2;
    int label = 0;
};

/// Two-modality labelled pool with a fixed train/test split. Labels act as the
/// annotation oracle: query strategies never read them.
struct Dataset {
    std::vector<MultimodalSample> samples;
    int num_classes = 0;
    int dim_m1 = 0;
    int dim_m2 = 0;
    std::vector<std::size_t> train_indices;
    std::vector<std::size_t> test_indices;

    std::size_t size() const { return samples.size(); }

    /// Throws ConfigError / DimensionError when an invariant is broken: label
    /// range, vector dimensions, finite entries, disjoint in-range splits.
    void validate() const;
};

struct SynthConfig {
    int n = 2000;
    int num_classes = 4;
    int dim_m1 = 16;
    int dim_m2 = 16;
    double snr_m1 = 1.0;
    double snr_m2 = 1.0;
    /// Fraction of samples whose modality-1 class mean is doubled.
    double dominant_fraction = 0.0;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Gaussian class clusters per modality. Class means are seeded random unit
/// directions scaled by the modality SNR; a `dominant_fraction` subset gets a
/// doubled modality-1 mean. Labels are balanced to within one sample and the
/// split is stratified 80/20.
Dataset generate_synthetic(const SynthConfig& cfg);

/// Per-class stratified split: round(train_fraction * count) of each class goes
/// to train. Both returned lists are sorted.
void stratified_split(Dataset& ds, double train_fraction, std::uint64_t seed);

struct FeatureSchema {
    int dim_m1 = 0;
    int dim_m2 = 0;
    /// 0 infers the class count from the largest label.
    int num_classes = 0;
    /// Used for the 80/20 split when no metadata sidecar exists.
    std::uint64_t split_seed = 0;
};

/// Reads `label,m1_0..,m2_0..` rows. The header line is optional. When a
/// `<path>.meta` sidecar exists its class count and split are used.
Dataset load_features(const std::filesystem::path& path, const FeatureSchema& schema);

/// Writes the feature CSV plus the `<path>.meta` sidecar. Values are written in
/// shortest round-trip form so that load_features reproduces them exactly.
void save_dataset(const Dataset& ds, const std::filesystem::path& path);

void write_features_csv(std::ostream& out, const Dataset& ds);
void write_metadata(std::ostream& out, const Dataset& ds);

std::filesystem::path metadata_path(const std::filesystem::path& csv_path);

} // namespace bmmal
