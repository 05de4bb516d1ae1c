#pragma once

#include "bmmal/dataset.h"
#include "bmmal/model.h"
#include "bmmal/random.h"

#include <random>

namespace testing {

inline Eigen::VectorXd random_vector(bmmal::Rng& rng, int dim, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    Eigen::VectorXd v(dim);
    for (int i = 0; i < dim; ++i) v[i] = n(rng);
    return v;
}

/// Random model with non-zero biases so that masked outcomes are not trivial.
inline bmmal::ModelParams random_model(bmmal::Rng& rng, const bmmal::ModelDims& dims, bmmal::Fusion fusion) {
    auto m = bmmal::init_model(dims, fusion, rng());
    std::normal_distribution<double> n(0.0, 0.3);
    auto jitter = [&](bmmal::DenseLayer& l) {
        for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias[i] = n(rng);
    };
    if (m.enc_m1) jitter(*m.enc_m1);
    if (m.enc_m2) jitter(*m.enc_m2);
    jitter(m.head_m1);
    jitter(m.head_m2);
    jitter(m.head_mm);
    m.head_mm.weight *= 2.0;
    return m;
}

inline bmmal::MultimodalSample random_sample(bmmal::Rng& rng, int d1, int d2, int label = 0) {
    return {random_vector(rng, d1, 1.5), random_vector(rng, d2, 1.5), label};
}

inline bmmal::SynthConfig dominant_config(std::uint64_t seed, int n = 600) {
    bmmal::SynthConfig cfg;
    cfg.n = n;
    cfg.num_classes = 4;
    cfg.dim_m1 = 8;
    cfg.dim_m2 = 8;
    cfg.snr_m1 = 1.5;
    cfg.snr_m2 = 1.5;
    cfg.dominant_fraction = 0.7;
    cfg.seed = seed;
    return cfg;
}

} // namespace testing
