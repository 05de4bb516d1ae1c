#include "bmmal/attribution.h"

#include "bmmal/error.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <string>

namespace bmmal {

double model_outcome(const ModelParams& model, const Features& z, unsigned mask, int pseudo_label) {
    if (pseudo_label < 0 || pseudo_label >= model.num_classes) throw ConfigError("pseudo label outside [0, K)");
    const Eigen::VectorXd z_m1 = (mask & kMaskM1) ? z.z_m1 : Eigen::VectorXd::Zero(z.z_m1.size());
    const Eigen::VectorXd z_m2 = (mask & kMaskM2) ? z.z_m2 : Eigen::VectorXd::Zero(z.z_m2.size());
    return softmax(multimodal_logits(model, z_m1, z_m2))[pseudo_label];
}

double model_outcome(const ModelParams& model, const MultimodalSample& sample, unsigned mask, int pseudo_label) {
    return model_outcome(model, encode(model, sample), mask, pseudo_label);
}

std::vector<double> shapley_exact(const OutcomeFn& outcome, int num_players) {
    if (num_players < 1) throw ConfigError("Shapley values need at least one player");
    if (num_players > kMaxShapleyPlayers)
        throw ConfigError("exact Shapley enumeration limited to " + std::to_string(kMaxShapleyPlayers) + " players");

    const std::uint32_t full = (1u << num_players);
    std::vector<double> value(full);
    for (std::uint32_t s = 0; s < full; ++s) value[s] = outcome(s);

    // weight[k] = k! (M-k-1)! / M!
    std::vector<double> weight(static_cast<std::size_t>(num_players));
    for (int k = 0; k < num_players; ++k) {
        double w = 1.0 / num_players;
        // 1 / (M * C(M-1, k))
        double binom = 1.0;
        for (int j = 1; j <= k; ++j) binom = binom * (num_players - 1 - k + j) / j;
        weight[static_cast<std::size_t>(k)] = w / binom;
    }

    std::vector<double> phi(static_cast<std::size_t>(num_players), 0.0);
    for (int i = 0; i < num_players; ++i) {
        const std::uint32_t bit = 1u << i;
        double acc = 0.0;
        for (std::uint32_t s = 0; s < full; ++s) {
            if (s & bit) continue;
            acc += weight[static_cast<std::size_t>(std::popcount(s))] * (value[s | bit] - value[s]);
        }
        phi[static_cast<std::size_t>(i)] = acc;
    }
    return phi;
}

std::array<double, 2> shapley_two(const std::array<double, 4>& v) {
    return {0.5 * ((v[kMaskBoth] - v[kMaskM2]) + (v[kMaskM1] - v[kMaskNone])),
            0.5 * ((v[kMaskBoth] - v[kMaskM1]) + (v[kMaskM2] - v[kMaskNone]))};
}

namespace {

std::array<double, 4> outcomes(const ModelParams& model, const Features& z, int pseudo_label) {
    std::array<double, 4> v{};
    for (unsigned mask = 0; mask < 4; ++mask) v[mask] = model_outcome(model, z, mask, pseudo_label);
    return v;
}

} // namespace

std::array<double, 2> shapley_two(const ModelParams& model, const MultimodalSample& sample) {
    ForwardResult fwd = forward(model, sample);
    return shapley_two(outcomes(model, Features{fwd.z_m1, fwd.z_m2}, fwd.pseudo_label));
}

Contribution contribution(std::span<const double> phi) {
    if (phi.empty()) throw ConfigError("contribution of zero modalities");
    Contribution c;
    double total = 0.0;
    for (double p : phi) total += std::abs(p);
    c.values.resize(phi.size());
    if (total == 0.0) {
        std::fill(c.values.begin(), c.values.end(), 1.0 / static_cast<double>(phi.size()));
        c.degenerate = true;
        return c;
    }
    for (std::size_t i = 0; i < phi.size(); ++i) c.values[i] = std::abs(phi[i]) / total;
    return c;
}

double dominance(std::span<const double> contribution) {
    if (contribution.empty()) return 0.0;
    const double top = *std::max_element(contribution.begin(), contribution.end());
    double rho = 0.0;
    for (double c : contribution) rho += top - c;
    return rho;
}

std::array<double, 2> modulation_weights(const std::array<double, 2>& c) {
    const double rho = std::abs(c[0] - c[1]);
    if (c[0] >= c[1]) return {1.0, 1.0 - rho};
    return {1.0 - rho, 1.0};
}

AttributionResult attribution_from_outcomes(const std::array<double, 4>& outcome_by_mask, int pseudo_label) {
    AttributionResult r;
    r.pseudo_label = pseudo_label;
    r.phi = shapley_two(outcome_by_mask);
    Contribution c = contribution(r.phi);
    r.contribution = {c.values[0], c.values[1]};
    r.degenerate = c.degenerate;
    r.rho = dominance(r.contribution);
    r.weights = modulation_weights(r.contribution);
    return r;
}

AttributionResult attribute(const ModelParams& model, const ForwardResult& fwd) {
    return attribution_from_outcomes(outcomes(model, Features{fwd.z_m1, fwd.z_m2}, fwd.pseudo_label), fwd.pseudo_label);
}

AttributionResult attribute(const ModelParams& model, const MultimodalSample& sample) {
    return attribute(model, forward(model, sample));
}

std::vector<AttributionResult> attribute_all(const ModelParams& model, const Dataset& ds,
                                             std::span<const std::size_t> indices) {
    std::vector<AttributionResult> out;
    out.reserve(indices.size());
    for (auto i : indices) {
        if (i >= ds.size()) throw ConfigError("attribution index out of range");
        out.push_back(attribute(model, ds.samples[i]));
    }
    return out;
}

} // namespace bmmal
