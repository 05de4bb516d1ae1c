#include "bmmal/embedding.h"

#include "bmmal/error.h"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace bmmal {

Eigen::VectorXd embedding_coefficients(const ForwardResult& fwd) {
    Eigen::VectorXd c = fwd.p_mm;
    c[fwd.pseudo_label] -= 1.0;
    return c;
}

GradientEmbedding build_embedding(const Eigen::VectorXd& coefficients, const Eigen::VectorXd& z_m1,
                                  const Eigen::VectorXd& z_m2, const std::array<double, 2>& weights,
                                  Fusion fusion, std::size_t sample_index, bool modulated) {
    if (fusion == Fusion::Sum && z_m1.size() != z_m2.size())
        throw DimensionError("sum fusion needs equal feature dimensions");
    const Eigen::VectorXd s_m1 = weights[0] * z_m1;
    const Eigen::VectorXd s_m2 = weights[1] * z_m2;
    Eigen::VectorXd fused;
    if (fusion == Fusion::Concat) {
        fused.resize(z_m1.size() + z_m2.size());
        fused << s_m1, s_m2;
    } else {
        fused = s_m1 + s_m2;
    }

    GradientEmbedding g;
    g.sample_index = sample_index;
    g.modulated = modulated;
    g.num_classes = static_cast<int>(coefficients.size());
    g.feature_dim = static_cast<int>(fused.size());
    g.values.resize(coefficients.size() * fused.size());
    for (Eigen::Index k = 0; k < coefficients.size(); ++k)
        g.values.segment(k * fused.size(), fused.size()) = coefficients[k] * fused;
    g.norm = g.values.norm();
    return g;
}

GradientEmbedding gradient_embedding(const ModelParams& model, const ForwardResult& fwd, std::size_t sample_index) {
    return build_embedding(embedding_coefficients(fwd), fwd.z_m1, fwd.z_m2, {1.0, 1.0}, model.fusion, sample_index,
                           false);
}

GradientEmbedding gradient_embedding(const ModelParams& model, const MultimodalSample& sample, std::size_t sample_index) {
    return gradient_embedding(model, forward(model, sample), sample_index);
}

ModulatedEmbedding modulated_embedding(const ModelParams& model, const ForwardResult& fwd, std::size_t sample_index) {
    ModulatedEmbedding out;
    out.attribution = attribute(model, fwd);
    out.embedding = build_embedding(embedding_coefficients(fwd), fwd.z_m1, fwd.z_m2, out.attribution.weights,
                                    model.fusion, sample_index, true);
    return out;
}

ModulatedEmbedding modulated_embedding(const ModelParams& model, const MultimodalSample& sample, std::size_t sample_index) {
    return modulated_embedding(model, forward(model, sample), sample_index);
}

namespace {

constexpr char kMagic[8] = {'B', 'M', 'M', 'A', 'L', 'E', 'M', 'B'};

void write_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint64_t read_u64(std::istream& in) {
    std::uint64_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw LoadError("truncated embedding file");
    return v;
}

} // namespace

void write_embedding_matrix(const std::filesystem::path& path, std::span<const GradientEmbedding> rows) {
    const std::uint64_t cols = rows.empty() ? 0 : static_cast<std::uint64_t>(rows.front().values.size());
    for (const auto& r : rows)
        if (static_cast<std::uint64_t>(r.values.size()) != cols) throw DimensionError("embedding rows differ in length");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out.write(kMagic, sizeof kMagic);
    write_u64(out, rows.size());
    write_u64(out, cols);
    for (const auto& r : rows) write_u64(out, r.sample_index);
    for (const auto& r : rows) out.write(reinterpret_cast<const char*>(r.values.data()), static_cast<std::streamsize>(cols * sizeof(double)));
    if (!out) throw Error("write failed for " + path.string());
}

EmbeddingMatrix read_embedding_matrix(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open " + path.string());
    char magic[8];
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
        throw LoadError("not an embedding matrix file: " + path.string());
    const auto rows = read_u64(in);
    const auto cols = read_u64(in);
    EmbeddingMatrix m;
    m.sample_indices.resize(rows);
    for (auto& idx : m.sample_indices) idx = read_u64(in);
    m.values.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    if (!in.read(reinterpret_cast<char*>(m.values.data()), static_cast<std::streamsize>(rows * cols * sizeof(double))))
        throw LoadError("truncated embedding file");
    return m;
}

} // namespace bmmal
