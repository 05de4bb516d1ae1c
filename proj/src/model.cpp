#include "bmmal/model.h"

#include "bmmal/error.h"
#include "bmmal/random.h"
#include "bmmal/text.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>

namespace bmmal {

std::string_view to_string(Fusion fusion) {
    switch (fusion) {
        case Fusion::Concat: return "concat";
        case Fusion::Sum: return "sum";
    }
    return "unknown";
}

Fusion parse_fusion(std::string_view name) {
    if (name == "concat") return Fusion::Concat;
    if (name == "sum") return Fusion::Sum;
    throw ConfigError("unknown fusion '" + std::string(name) + "' (expected concat or sum)");
}

namespace {

DenseLayer random_layer(int out, int in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    DenseLayer layer;
    layer.weight.resize(out, in);
    for (int r = 0; r < out; ++r)
        for (int c = 0; c < in; ++c) layer.weight(r, c) = dist(rng);
    layer.bias = Eigen::VectorXd::Zero(out);
    return layer;
}

DenseLayer zero_layer(const DenseLayer& like) {
    return DenseLayer{Eigen::MatrixXd::Zero(like.weight.rows(), like.weight.cols()),
                      Eigen::VectorXd::Zero(like.bias.size())};
}

void check_layer(const DenseLayer& layer, Eigen::Index rows, Eigen::Index cols, const char* name) {
    if (layer.weight.rows() != rows || layer.weight.cols() != cols || layer.bias.size() != rows)
        throw DimensionError(std::string(name) + " has shape " + std::to_string(layer.weight.rows()) + "x" +
                             std::to_string(layer.weight.cols()) + ", expected " + std::to_string(rows) + "x" +
                             std::to_string(cols));
    if (!layer.weight.allFinite() || !layer.bias.allFinite())
        throw ConfigError(std::string(name) + " has non-finite entries");
}

Eigen::VectorXd relu(const Eigen::VectorXd& v) { return v.cwiseMax(0.0); }

void check_sample(const ModelParams& model, const MultimodalSample& sample) {
    if (sample.x_m1.size() != model.input_dim_m1 || sample.x_m2.size() != model.input_dim_m2)
        throw DimensionError("sample dimensions (" + std::to_string(sample.x_m1.size()) + ", " +
                             std::to_string(sample.x_m2.size()) + ") do not match model inputs (" +
                             std::to_string(model.input_dim_m1) + ", " + std::to_string(model.input_dim_m2) + ")");
}

// out += scale * g, shape-for-shape.
void axpy(ModelParams& out, double scale, const ModelParams& g) {
    auto layer = [scale](DenseLayer& a, const DenseLayer& b) {
        a.weight += scale * b.weight;
        a.bias += scale * b.bias;
    };
    if (out.enc_m1) layer(*out.enc_m1, *g.enc_m1);
    if (out.enc_m2) layer(*out.enc_m2, *g.enc_m2);
    layer(out.head_m1, g.head_m1);
    layer(out.head_m2, g.head_m2);
    layer(out.head_mm, g.head_mm);
}

void write_matrix(std::ostream& out, const char* name, const Eigen::MatrixXd& m) {
    out << "matrix " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) out << (c ? " " : "") << format_double(m(r, c));
        out << '\n';
    }
}

void write_layer(std::ostream& out, const std::string& name, const DenseLayer& layer) {
    write_matrix(out, (name + ".weight").c_str(), layer.weight);
    write_matrix(out, (name + ".bias").c_str(), layer.bias);
}

class TokenReader {
public:
    explicit TokenReader(std::istream& in) : in_(in) {}

    std::string word() {
        std::string w;
        if (!(in_ >> w)) throw LoadError("unexpected end of checkpoint");
        return w;
    }
    void expect(std::string_view w) {
        auto got = word();
        if (got != w) throw LoadError("checkpoint: expected '" + std::string(w) + "', found '" + got + "'");
    }
    long long integer() {
        auto w = word();
        auto v = parse_integer<long long>(w);
        if (!v || *v < 0) throw LoadError("checkpoint: bad integer '" + w + "'");
        return *v;
    }
    double number() {
        auto w = word();
        auto v = parse_double(w);
        if (!v || !std::isfinite(*v)) throw LoadError("checkpoint: bad number '" + w + "'");
        return *v;
    }
    Eigen::MatrixXd matrix(const std::string& name) {
        expect("matrix");
        expect(name);
        auto rows = integer();
        auto cols = integer();
        Eigen::MatrixXd m(rows, cols);
        for (Eigen::Index r = 0; r < rows; ++r)
            for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = number();
        return m;
    }
    DenseLayer layer(const std::string& name) {
        DenseLayer l;
        l.weight = matrix(name + ".weight");
        Eigen::MatrixXd b = matrix(name + ".bias");
        if (b.cols() != 1) throw LoadError("checkpoint: " + name + ".bias must be a column");
        l.bias = b.col(0);
        return l;
    }

private:
    std::istream& in_;
};

} // namespace

void ModelParams::validate() const {
    if (num_classes < 1) throw ConfigError("model needs at least one class");
    if (input_dim_m1 < 1 || input_dim_m2 < 1) throw ConfigError("model input dimensions must be positive");
    if (enc_m1) check_layer(*enc_m1, enc_m1->weight.rows(), input_dim_m1, "enc_m1");
    if (enc_m2) check_layer(*enc_m2, enc_m2->weight.rows(), input_dim_m2, "enc_m2");
    if (fusion == Fusion::Sum && feature_dim_m1() != feature_dim_m2())
        throw ConfigError("sum fusion needs equal feature dimensions, got " + std::to_string(feature_dim_m1()) +
                          " and " + std::to_string(feature_dim_m2()));
    check_layer(head_m1, num_classes, feature_dim_m1(), "head_m1");
    check_layer(head_m2, num_classes, feature_dim_m2(), "head_m2");
    check_layer(head_mm, num_classes, fused_dim(), "head_mm");
}

ModelParams init_model(const ModelDims& dims, Fusion fusion, std::uint64_t seed) {
    if (dims.num_classes < 1 || dims.input_m1 < 1 || dims.input_m2 < 1 || dims.hidden_m1 < 0 || dims.hidden_m2 < 0)
        throw ConfigError("model dimensions must be positive");
    const int feat_m1 = dims.hidden_m1 > 0 ? dims.hidden_m1 : dims.input_m1;
    const int feat_m2 = dims.hidden_m2 > 0 ? dims.hidden_m2 : dims.input_m2;
    if (fusion == Fusion::Sum && feat_m1 != feat_m2)
        throw ConfigError("sum fusion needs equal feature dimensions, got " + std::to_string(feat_m1) + " and " +
                          std::to_string(feat_m2));

    Rng rng(seed);
    ModelParams m;
    m.num_classes = dims.num_classes;
    m.fusion = fusion;
    m.input_dim_m1 = dims.input_m1;
    m.input_dim_m2 = dims.input_m2;
    if (dims.hidden_m1 > 0) m.enc_m1 = random_layer(dims.hidden_m1, dims.input_m1, rng);
    if (dims.hidden_m2 > 0) m.enc_m2 = random_layer(dims.hidden_m2, dims.input_m2, rng);
    m.head_m1 = random_layer(dims.num_classes, feat_m1, rng);
    m.head_m2 = random_layer(dims.num_classes, feat_m2, rng);
    m.head_mm = random_layer(dims.num_classes, fusion == Fusion::Concat ? feat_m1 + feat_m2 : feat_m1, rng);
    return m;
}

ModelParams zeros_like(const ModelParams& like) {
    ModelParams z = like;
    if (z.enc_m1) z.enc_m1 = zero_layer(*like.enc_m1);
    if (z.enc_m2) z.enc_m2 = zero_layer(*like.enc_m2);
    z.head_m1 = zero_layer(like.head_m1);
    z.head_m2 = zero_layer(like.head_m2);
    z.head_mm = zero_layer(like.head_mm);
    return z;
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
    const double shift = logits.maxCoeff();
    Eigen::VectorXd e = (logits.array() - shift).exp();
    return e / e.sum();
}

double log_sum_exp(const Eigen::VectorXd& logits) {
    const double shift = logits.maxCoeff();
    return shift + std::log((logits.array() - shift).exp().sum());
}

double cross_entropy(const Eigen::VectorXd& logits, int label) { return log_sum_exp(logits) - logits[label]; }

int argmax(const Eigen::VectorXd& v) {
    int best = 0;
    for (Eigen::Index i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = static_cast<int>(i);
    return best;
}

Features encode(const ModelParams& model, const MultimodalSample& sample) {
    check_sample(model, sample);
    Features z;
    z.z_m1 = model.enc_m1 ? relu(model.enc_m1->apply(sample.x_m1)) : sample.x_m1;
    z.z_m2 = model.enc_m2 ? relu(model.enc_m2->apply(sample.x_m2)) : sample.x_m2;
    return z;
}

Eigen::VectorXd fuse(const ModelParams& model, const Eigen::VectorXd& z_m1, const Eigen::VectorXd& z_m2) {
    if (model.fusion == Fusion::Sum) return z_m1 + z_m2;
    Eigen::VectorXd z(z_m1.size() + z_m2.size());
    z << z_m1, z_m2;
    return z;
}

Eigen::VectorXd multimodal_logits(const ModelParams& model, const Eigen::VectorXd& z_m1, const Eigen::VectorXd& z_m2) {
    return model.head_mm.apply(fuse(model, z_m1, z_m2));
}

ForwardResult forward(const ModelParams& model, const MultimodalSample& sample) {
    ForwardResult r;
    Features z = encode(model, sample);
    r.z_m1 = std::move(z.z_m1);
    r.z_m2 = std::move(z.z_m2);
    r.z_mm = fuse(model, r.z_m1, r.z_m2);
    r.f_m1 = model.head_m1.apply(r.z_m1);
    r.f_m2 = model.head_m2.apply(r.z_m2);
    r.f_mm = model.head_mm.apply(r.z_mm);
    r.p_mm = softmax(r.f_mm);
    r.pseudo_label = argmax(r.f_mm);
    return r;
}

double loss_final(const ModelParams& model, const MultimodalSample& sample, int label) {
    if (label < 0 || label >= model.num_classes) throw ConfigError("label outside [0, K)");
    ForwardResult r = forward(model, sample);
    return (cross_entropy(r.f_m1, label) + cross_entropy(r.f_m2, label) + cross_entropy(r.f_mm, label)) / 3.0;
}

ModelParams loss_gradient(const ModelParams& model, const MultimodalSample& sample, int label) {
    if (label < 0 || label >= model.num_classes) throw ConfigError("label outside [0, K)");
    check_sample(model, sample);

    // Encoder pre-activations are needed for the ReLU gate.
    Eigen::VectorXd a_m1, a_m2;
    Eigen::VectorXd z_m1 = sample.x_m1, z_m2 = sample.x_m2;
    if (model.enc_m1) {
        a_m1 = model.enc_m1->apply(sample.x_m1);
        z_m1 = relu(a_m1);
    }
    if (model.enc_m2) {
        a_m2 = model.enc_m2->apply(sample.x_m2);
        z_m2 = relu(a_m2);
    }
    const Eigen::VectorXd z_mm = fuse(model, z_m1, z_m2);

    auto head_delta = [&](const DenseLayer& head, const Eigen::VectorXd& z) {
        Eigen::VectorXd d = softmax(head.apply(z));
        d[label] -= 1.0;
        return Eigen::VectorXd(d / 3.0);
    };
    const Eigen::VectorXd d_m1 = head_delta(model.head_m1, z_m1);
    const Eigen::VectorXd d_m2 = head_delta(model.head_m2, z_m2);
    const Eigen::VectorXd d_mm = head_delta(model.head_mm, z_mm);

    ModelParams g = zeros_like(model);
    g.head_m1.weight = d_m1 * z_m1.transpose();
    g.head_m1.bias = d_m1;
    g.head_m2.weight = d_m2 * z_m2.transpose();
    g.head_m2.bias = d_m2;
    g.head_mm.weight = d_mm * z_mm.transpose();
    g.head_mm.bias = d_mm;

    if (!model.enc_m1 && !model.enc_m2) return g;

    const Eigen::VectorXd dz_mm = model.head_mm.weight.transpose() * d_mm;
    Eigen::VectorXd dz_m1 = model.head_m1.weight.transpose() * d_m1;
    Eigen::VectorXd dz_m2 = model.head_m2.weight.transpose() * d_m2;
    if (model.fusion == Fusion::Concat) {
        dz_m1 += dz_mm.head(z_m1.size());
        dz_m2 += dz_mm.tail(z_m2.size());
    } else {
        dz_m1 += dz_mm;
        dz_m2 += dz_mm;
    }
    if (model.enc_m1) {
        Eigen::VectorXd da = dz_m1.array() * (a_m1.array() > 0.0).cast<double>();
        g.enc_m1->weight = da * sample.x_m1.transpose();
        g.enc_m1->bias = da;
    }
    if (model.enc_m2) {
        Eigen::VectorXd da = dz_m2.array() * (a_m2.array() > 0.0).cast<double>();
        g.enc_m2->weight = da * sample.x_m2.transpose();
        g.enc_m2->bias = da;
    }
    return g;
}

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("train.epochs must be positive");
    if (batch_size < 1) throw ConfigError("train.batch_size must be positive");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
        throw ConfigError("train.learning_rate must be finite and non-negative");
}

TrainResult train(ModelParams model, const Dataset& ds, std::span<const std::size_t> labeled, const TrainConfig& cfg) {
    cfg.validate();
    model.validate();
    if (labeled.empty()) throw ConfigError("cannot train on an empty labelled set");
    if (model.input_dim_m1 != ds.dim_m1 || model.input_dim_m2 != ds.dim_m2 || model.num_classes != ds.num_classes)
        throw DimensionError("model does not match dataset dimensions");
    std::vector<char> in_train(ds.size(), 0);
    for (auto i : ds.train_indices) in_train[i] = 1;
    for (auto i : labeled)
        if (i >= ds.size() || !in_train[i]) throw ConfigError("labelled index " + std::to_string(i) + " is not in the train split");

    Rng rng(cfg.seed);
    std::vector<std::size_t> order(labeled.begin(), labeled.end());
    TrainResult result;
    result.epoch_losses.reserve(static_cast<std::size_t>(cfg.epochs));
    const auto batch = static_cast<std::size_t>(cfg.batch_size);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t end = std::min(order.size(), start + batch);
            ModelParams grad = zeros_like(model);
            for (std::size_t k = start; k < end; ++k) {
                const auto& s = ds.samples[order[k]];
                loss_sum += loss_final(model, s, s.label);
                axpy(grad, 1.0, loss_gradient(model, s, s.label));
            }
            axpy(model, -cfg.learning_rate / static_cast<double>(end - start), grad);
        }
        result.epoch_losses.push_back(loss_sum / static_cast<double>(order.size()));
    }
    result.params = std::move(model);
    return result;
}

Accuracy evaluate(const ModelParams& model, const Dataset& ds, std::span<const std::size_t> indices) {
    if (indices.empty()) throw ConfigError("cannot evaluate on an empty index set");
    std::size_t hit_mm = 0, hit_m1 = 0, hit_m2 = 0;
    for (auto i : indices) {
        if (i >= ds.size()) throw ConfigError("evaluation index out of range");
        const auto& s = ds.samples[i];
        ForwardResult r = forward(model, s);
        hit_mm += r.pseudo_label == s.label;
        hit_m1 += argmax(r.f_m1) == s.label;
        hit_m2 += argmax(r.f_m2) == s.label;
    }
    const double n = static_cast<double>(indices.size());
    return {static_cast<double>(hit_mm) / n, static_cast<double>(hit_m1) / n, static_cast<double>(hit_m2) / n};
}

void write_checkpoint(std::ostream& out, const ModelParams& model) {
    model.validate();
    out << "bmmal-checkpoint 1\n";
    out << "classes " << model.num_classes << '\n';
    out << "fusion " << to_string(model.fusion) << '\n';
    out << "inputs " << model.input_dim_m1 << ' ' << model.input_dim_m2 << '\n';
    out << "encoders " << (model.enc_m1 ? 1 : 0) << ' ' << (model.enc_m2 ? 1 : 0) << '\n';
    if (model.enc_m1) write_layer(out, "enc_m1", *model.enc_m1);
    if (model.enc_m2) write_layer(out, "enc_m2", *model.enc_m2);
    write_layer(out, "head_m1", model.head_m1);
    write_layer(out, "head_m2", model.head_m2);
    write_layer(out, "head_mm", model.head_mm);
}

ModelParams read_checkpoint(std::istream& in) {
    TokenReader r(in);
    r.expect("bmmal-checkpoint");
    r.expect("1");
    ModelParams m;
    r.expect("classes");
    m.num_classes = static_cast<int>(r.integer());
    r.expect("fusion");
    m.fusion = parse_fusion(r.word());
    r.expect("inputs");
    m.input_dim_m1 = static_cast<int>(r.integer());
    m.input_dim_m2 = static_cast<int>(r.integer());
    r.expect("encoders");
    const bool has_m1 = r.integer() != 0;
    const bool has_m2 = r.integer() != 0;
    if (has_m1) m.enc_m1 = r.layer("enc_m1");
    if (has_m2) m.enc_m2 = r.layer("enc_m2");
    m.head_m1 = r.layer("head_m1");
    m.head_m2 = r.layer("head_m2");
    m.head_mm = r.layer("head_mm");
    try {
        m.validate();
    } catch (const Error& e) {
        throw LoadError(std::string("checkpoint: ") + e.what());
    }
    return m;
}

void save_checkpoint(const ModelParams& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint " + path.string());
    write_checkpoint(out, model);
    if (!out) throw Error("write failed for " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open checkpoint " + path.string());
    return read_checkpoint(in);
}

} // namespace bmmal
