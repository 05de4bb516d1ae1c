#pragma once

#include "bmmal/attribution.h"
#include "bmmal/model.h"

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace bmmal {

/// Gradient of the pseudo-label cross-entropy of the fused head with respect
/// to its weight matrix, flattened row-major over (class, feature).
struct GradientEmbedding {
    std::size_t sample_index = 0;
    bool modulated = false;
    int num_classes = 0;
    int feature_dim = 0;
    Eigen::VectorXd values;
    double norm = 0.0;

    Eigen::VectorXd row(int k) const { return values.segment(static_cast<Eigen::Index>(k) * feature_dim, feature_dim); }
};

/// p - onehot(pseudo_label)
Eigen::VectorXd embedding_coefficients(const ForwardResult& fwd);

/// Row k is coeff_k * (w1 z_m1 ⊕ w2 z_m2) for concat fusion and
/// coeff_k * (w1 z_m1 + w2 z_m2) for sum fusion. Weights (1, 1) give the plain
/// embedding.
GradientEmbedding build_embedding(const Eigen::VectorXd& coefficients, const Eigen::VectorXd& z_m1,
                                  const Eigen::VectorXd& z_m2, const std::array<double, 2>& weights,
                                  Fusion fusion, std::size_t sample_index, bool modulated);

GradientEmbedding gradient_embedding(const ModelParams& model, const MultimodalSample& sample,
                                     std::size_t sample_index = 0);
GradientEmbedding gradient_embedding(const ModelParams& model, const ForwardResult& fwd,
                                     std::size_t sample_index = 0);

struct ModulatedEmbedding {
    GradientEmbedding embedding;
    AttributionResult attribution;
};

/// Plain embedding with each modality block scaled by the Shapley-derived
/// modulation weights.
ModulatedEmbedding modulated_embedding(const ModelParams& model, const MultimodalSample& sample,
                                       std::size_t sample_index = 0);
ModulatedEmbedding modulated_embedding(const ModelParams& model, const ForwardResult& fwd,
                                       std::size_t sample_index = 0);

/// Binary dump: magic "BMMALEMB", u64 rows, u64 cols, rows x u64 sample
/// index, then rows x cols float64 row-major. Little-endian host order.
void write_embedding_matrix(const std::filesystem::path& path, std::span<const GradientEmbedding> rows);

struct EmbeddingMatrix {
    std::vector<std::size_t> sample_indices;
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> values;
};

EmbeddingMatrix read_embedding_matrix(const std::filesystem::path& path);

} // namespace bmmal
