#pragma once

#include "bmmal/dataset.h"
#include "bmmal/model.h"

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace bmmal {

/// Bit i set means modality i keeps its features; a cleared bit replaces
/// them with the zero vector.
enum ModalityMask : unsigned {
    kMaskNone = 0u,
    kMaskM1 = 1u,
    kMaskM2 = 2u,
    kMaskBoth = 3u,
};

/// softmax(f_mm)[pseudo_label] evaluated on masked encoder features. Masking
/// happens after the encoders, before fusion.
double model_outcome(const ModelParams& model, const Features& z, unsigned mask, int pseudo_label);
double model_outcome(const ModelParams& model, const MultimodalSample& sample, unsigned mask,
                     int pseudo_label);

/// Value of a coalition; bit i of the argument is player i.
using OutcomeFn = std::function<double(std::uint32_t)>;

inline constexpr int kMaxShapleyPlayers = 20;

/// Exact Shapley values by enumerating all 2^M coalitions. Rejects M < 1 and
/// M > kMaxShapleyPlayers with ConfigError.
std::vector<double> shapley_exact(const OutcomeFn& outcome, int num_players);

/// Two-modality closed form; four outcome evaluations.
std::array<double, 2> shapley_two(const std::array<double, 4>& outcome_by_mask);
std::array<double, 2> shapley_two(const ModelParams& model, const MultimodalSample& sample);

struct Contribution {
    std::vector<double> values;
    /// All Shapley values were exactly zero; values fall back to uniform.
    bool degenerate = false;
};

/// |phi_i| / sum_j |phi_j|
Contribution contribution(std::span<const double> phi);

/// sum_i (max(Phi) - Phi_i)
double dominance(std::span<const double> contribution);

/// Weight 1 for the dominant modality (ties go to modality 1) and 1 - rho for
/// the other one.
std::array<double, 2> modulation_weights(const std::array<double, 2>& contribution);

struct AttributionResult {
    int pseudo_label = 0;
    std::array<double, 2> phi{};
    std::array<double, 2> contribution{};
    double rho = 0.0;
    std::array<double, 2> weights{1.0, 1.0};
    bool degenerate = false;

    /// 0 for modality 1, 1 for modality 2; ties resolve to modality 1.
    int dominant() const { return contribution[1] > contribution[0] ? 1 : 0; }
};

/// Builds the full attribution from the four coalition outcomes.
AttributionResult attribution_from_outcomes(const std::array<double, 4>& outcome_by_mask, int pseudo_label);

AttributionResult attribute(const ModelParams& model, const ForwardResult& fwd);
AttributionResult attribute(const ModelParams& model, const MultimodalSample& sample);

std::vector<AttributionResult> attribute_all(const ModelParams& model, const Dataset& ds,
                                             std::span<const std::size_t> indices);

} // namespace bmmal
