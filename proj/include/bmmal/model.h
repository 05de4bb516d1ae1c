#pragma once

#include "bmmal/dataset.h"

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace bmmal {

enum class Fusion { Concat, Sum };

std::string_view to_string(Fusion fusion);
Fusion parse_fusion(std::string_view name);

/// y = W x + b
struct DenseLayer {
    Eigen::MatrixXd weight;
    Eigen::VectorXd bias;

    Eigen::VectorXd apply(const Eigen::VectorXd& x) const { return weight * x + bias; }
};

struct ModelDims {
    int input_m1 = 0;
    int input_m2 = 0;
    /// 0 keeps the encoder as the identity map.
    int hidden_m1 = 0;
    int hidden_m2 = 0;
    int num_classes = 0;
};

/// Two encoders, late fusion and three linear heads (modality 1, modality 2,
/// fused). An absent encoder is the identity; a present one is affine + ReLU.
struct ModelParams {
    int num_classes = 0;
    Fusion fusion = Fusion::Concat;
    int input_dim_m1 = 0;
    int input_dim_m2 = 0;
    std::optional<DenseLayer> enc_m1;
    std::optional<DenseLayer> enc_m2;
    DenseLayer head_m1;
    DenseLayer head_m2;
    DenseLayer head_mm;

    int feature_dim_m1() const { return enc_m1 ? static_cast<int>(enc_m1->weight.rows()) : input_dim_m1; }
    int feature_dim_m2() const { return enc_m2 ? static_cast<int>(enc_m2->weight.rows()) : input_dim_m2; }
    int fused_dim() const {
        return fusion == Fusion::Concat ? feature_dim_m1() + feature_dim_m2() : feature_dim_m1();
    }

    /// Checks every matrix shape against the fusion rule and that all entries
    /// are finite.
    void validate() const;
};

ModelParams init_model(const ModelDims& dims, Fusion fusion, std::uint64_t seed);

/// A zero-filled parameter set with the same shapes as `like`.
ModelParams zeros_like(const ModelParams& like);

struct Features {
    Eigen::VectorXd z_m1;
    Eigen::VectorXd z_m2;
};

struct ForwardResult {
    Eigen::VectorXd z_m1, z_m2, z_mm;
    Eigen::VectorXd f_m1, f_m2, f_mm;
    Eigen::VectorXd p_mm;
    int pseudo_label = 0;
};

Eigen::VectorXd softmax(const Eigen::VectorXd& logits);
double log_sum_exp(const Eigen::VectorXd& logits);
/// -log softmax(logits)[label]
double cross_entropy(const Eigen::VectorXd& logits, int label);
/// Lowest index wins ties.
int argmax(const Eigen::VectorXd& v);

Features encode(const ModelParams& model, const MultimodalSample& sample);
Eigen::VectorXd fuse(const ModelParams& model, const Eigen::VectorXd& z_m1, const Eigen::VectorXd& z_m2);
Eigen::VectorXd multimodal_logits(const ModelParams& model, const Eigen::VectorXd& z_m1,
                                  const Eigen::VectorXd& z_m2);

ForwardResult forward(const ModelParams& model, const MultimodalSample& sample);

/// Mean of the cross-entropies of the three heads.
double loss_final(const ModelParams& model, const MultimodalSample& sample, int label);

/// Analytic gradient of loss_final with respect to every parameter, returned
/// in a ModelParams of identical shape.
ModelParams loss_gradient(const ModelParams& model, const MultimodalSample& sample, int label);

struct TrainConfig {
    int epochs = 30;
    int batch_size = 16;
    double learning_rate = 0.05;
    std::uint64_t seed = 0;

    void validate() const;
};

struct TrainResult {
    ModelParams params;
    /// Mean loss over the samples visited in each epoch, measured before each
    /// minibatch update.
    std::vector<double> epoch_losses;
};

/// Minibatch SGD on loss_final over `labeled` (which must lie in the train
/// split). Shuffling is driven by cfg.seed only.
TrainResult train(ModelParams model, const Dataset& ds, std::span<const std::size_t> labeled,
                  const TrainConfig& cfg);

struct Accuracy {
    double mm = 0.0;
    double m1 = 0.0;
    double m2 = 0.0;
};

/// Top-1 accuracy of each head over `indices`.
Accuracy evaluate(const ModelParams& model, const Dataset& ds, std::span<const std::size_t> indices);

void save_checkpoint(const ModelParams& model, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);
void write_checkpoint(std::ostream& out, const ModelParams& model);
ModelParams read_checkpoint(std::istream& in);

} // namespace bmmal
