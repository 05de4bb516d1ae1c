#include "bmmal/dataset.h"

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

namespace {

bool all_finite(const Eigen::VectorXd& v) { return v.allFinite(); }

Eigen::VectorXd random_unit(Rng& rng, int dim) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd v(dim);
    do {
        for (int i = 0; i < dim; ++i) v[i] = normal(rng);
    } while (v.norm() == 0.0);
    return v / v.norm();
}

std::vector<std::size_t> parse_index_list(std::string_view text, std::size_t line_no) {
    std::vector<std::size_t> out;
    for (auto tok : split(text, ' ')) {
        if (tok.empty()) continue;
        auto v = parse_integer<std::size_t>(tok);
        if (!v) throw LoadError("bad index '" + std::string(tok) + "' in metadata", line_no);
        out.push_back(*v);
    }
    return out;
}

struct Metadata {
    std::size_t samples = 0;
    int num_classes = 0;
    int dim_m1 = 0;
    int dim_m2 = 0;
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

Metadata read_metadata(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open metadata file " + path.string());
    Metadata meta;
    bool seen_format = false;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw LoadError("expected key=value in metadata", line_no);
        std::string_view key(line.data(), eq);
        std::string_view value(line.data() + eq + 1, line.size() - eq - 1);
        auto as_int = [&](std::string_view v) {
            auto parsed = parse_integer<long long>(v);
            if (!parsed || *parsed < 0) throw LoadError("bad value for " + std::string(key), line_no);
            return *parsed;
        };
        if (key == "format") {
            if (value != "bmmal-dataset-v1") throw LoadError("unsupported metadata format", line_no);
            seen_format = true;
        } else if (key == "samples") {
            meta.samples = static_cast<std::size_t>(as_int(value));
        } else if (key == "classes") {
            meta.num_classes = static_cast<int>(as_int(value));
        } else if (key == "dim_m1") {
            meta.dim_m1 = static_cast<int>(as_int(value));
        } else if (key == "dim_m2") {
            meta.dim_m2 = static_cast<int>(as_int(value));
        } else if (key == "train") {
            meta.train = parse_index_list(value, line_no);
        } else if (key == "test") {
            meta.test = parse_index_list(value, line_no);
        } else {
            throw LoadError("unknown metadata key " + std::string(key), line_no);
        }
    }
    if (!seen_format) throw LoadError("metadata missing format line");
    return meta;
}

} // namespace

void Dataset::validate() const {
    if (num_classes < 1) throw ConfigError("dataset needs at least one class");
    if (dim_m1 < 1 || dim_m2 < 1) throw ConfigError("modality dimensions must be positive");
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        if (s.label < 0 || s.label >= num_classes)
            throw ConfigError("sample " + std::to_string(i) + " has label outside [0, K)");
        if (s.x_m1.size() != dim_m1 || s.x_m2.size() != dim_m2)
            throw DimensionError("sample " + std::to_string(i) + " has wrong feature dimension");
        if (!all_finite(s.x_m1) || !all_finite(s.x_m2))
            throw ConfigError("sample " + std::to_string(i) + " has non-finite features");
    }
    std::vector<char> seen(samples.size(), 0);
    auto mark = [&](const std::vector<std::size_t>& idx, const char* name) {
        for (auto i : idx) {
            if (i >= samples.size()) throw ConfigError(std::string(name) + " index out of range");
            if (seen[i]) throw ConfigError(std::string(name) + " index " + std::to_string(i) + " repeated or shared");
            seen[i] = 1;
        }
    };
    mark(train_indices, "train");
    mark(test_indices, "test");
}

void SynthConfig::validate() const {
    if (num_classes < 1) throw ConfigError("synthetic: classes must be positive");
    if (n < num_classes) throw ConfigError("synthetic: n must be at least the number of classes");
    if (dim_m1 < 1 || dim_m2 < 1) throw ConfigError("synthetic: dimensions must be positive");
    if (!(snr_m1 >= 0.0) || !(snr_m2 >= 0.0) || !std::isfinite(snr_m1) || !std::isfinite(snr_m2))
        throw ConfigError("synthetic: snr must be finite and non-negative");
    if (!(dominant_fraction >= 0.0 && dominant_fraction <= 1.0))
        throw ConfigError("synthetic: dominant_fraction must lie in [0, 1]");
}

void stratified_split(Dataset& ds, double train_fraction, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(ds.num_classes));
    for (std::size_t i = 0; i < ds.samples.size(); ++i) by_class[static_cast<std::size_t>(ds.samples[i].label)].push_back(i);
    ds.train_indices.clear();
    ds.test_indices.clear();
    for (auto& members : by_class) {
        std::shuffle(members.begin(), members.end(), rng);
        auto n_train = static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(members.size())));
        n_train = std::min(n_train, members.size());
        ds.train_indices.insert(ds.train_indices.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_train));
        ds.test_indices.insert(ds.test_indices.end(), members.begin() + static_cast<std::ptrdiff_t>(n_train), members.end());
    }
    std::sort(ds.train_indices.begin(), ds.train_indices.end());
    std::sort(ds.test_indices.begin(), ds.test_indices.end());
}

Dataset generate_synthetic(const SynthConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    std::normal_distribution<double> noise(0.0, 1.0);

    std::vector<Eigen::VectorXd> mean_m1, mean_m2;
    for (int k = 0; k < cfg.num_classes; ++k) mean_m1.push_back(cfg.snr_m1 * random_unit(rng, cfg.dim_m1));
    for (int k = 0; k < cfg.num_classes; ++k) mean_m2.push_back(cfg.snr_m2 * random_unit(rng, cfg.dim_m2));

    std::vector<int> labels(static_cast<std::size_t>(cfg.n));
    for (int i = 0; i < cfg.n; ++i) labels[static_cast<std::size_t>(i)] = i % cfg.num_classes;
    std::shuffle(labels.begin(), labels.end(), rng);

    std::vector<std::size_t> order(static_cast<std::size_t>(cfg.n));
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    auto n_boosted = static_cast<std::size_t>(std::lround(cfg.dominant_fraction * cfg.n));
    std::vector<char> boosted(static_cast<std::size_t>(cfg.n), 0);
    for (std::size_t i = 0; i < n_boosted; ++i) boosted[order[i]] = 1;

    Dataset ds;
    ds.num_classes = cfg.num_classes;
    ds.dim_m1 = cfg.dim_m1;
    ds.dim_m2 = cfg.dim_m2;
    ds.samples.reserve(static_cast<std::size_t>(cfg.n));
    for (std::size_t i = 0; i < static_cast<std::size_t>(cfg.n); ++i) {
        MultimodalSample s;
        s.label = labels[i];
        const double scale = boosted[i] ? 2.0 : 1.0;
        s.x_m1 = scale * mean_m1[static_cast<std::size_t>(s.label)];
        for (int d = 0; d < cfg.dim_m1; ++d) s.x_m1[d] += noise(rng);
        s.x_m2 = mean_m2[static_cast<std::size_t>(s.label)];
        for (int d = 0; d < cfg.dim_m2; ++d) s.x_m2[d] += noise(rng);
        ds.samples.push_back(std::move(s));
    }
    stratified_split(ds, 0.8, derive_seed(cfg.seed, {0x5b11u}));
    return ds;
}

std::filesystem::path metadata_path(const std::filesystem::path& csv_path) {
    auto p = csv_path;
    p += ".meta";
    return p;
}

Dataset load_features(const std::filesystem::path& path, const FeatureSchema& schema) {
    if (schema.dim_m1 < 1 || schema.dim_m2 < 1) throw ConfigError("feature schema dimensions must be positive");
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open feature file " + path.string());

    const std::size_t width = 1 + static_cast<std::size_t>(schema.dim_m1 + schema.dim_m2);
    Dataset ds;
    ds.dim_m1 = schema.dim_m1;
    ds.dim_m2 = schema.dim_m2;
    int max_label = -1;

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cols = split(line, ',');
        if (line_no == 1 && cols.front() == "label") {
            if (cols.size() != width) throw LoadError("header has " + std::to_string(cols.size()) +
                                                      " columns, expected " + std::to_string(width), line_no);
            continue;
        }
        if (cols.size() != width)
            throw LoadError("expected " + std::to_string(width) + " columns, found " + std::to_string(cols.size()), line_no);
        auto label = parse_integer<int>(cols[0]);
        if (!label || *label < 0) throw LoadError("bad label '" + std::string(cols[0]) + "'", line_no);
        MultimodalSample s;
        s.label = *label;
        s.x_m1.resize(schema.dim_m1);
        s.x_m2.resize(schema.dim_m2);
        for (std::size_t c = 1; c < width; ++c) {
            auto v = parse_double(cols[c]);
            if (!v) throw LoadError("bad number '" + std::string(cols[c]) + "' in column " + std::to_string(c + 1), line_no);
            if (!std::isfinite(*v)) throw LoadError("non-finite value in column " + std::to_string(c + 1), line_no);
            const auto d = static_cast<Eigen::Index>(c - 1);
            if (d < schema.dim_m1) s.x_m1[d] = *v;
            else s.x_m2[d - schema.dim_m1] = *v;
        }
        if (schema.num_classes > 0 && s.label >= schema.num_classes)
            throw LoadError("label " + std::to_string(s.label) + " outside [0, " + std::to_string(schema.num_classes) + ")", line_no);
        max_label = std::max(max_label, s.label);
        ds.samples.push_back(std::move(s));
    }
    if (ds.samples.empty()) throw LoadError("no samples in " + path.string());

    const auto meta_file = metadata_path(path);
    if (std::filesystem::exists(meta_file)) {
        Metadata meta = read_metadata(meta_file);
        if (meta.samples != ds.samples.size()) throw LoadError("metadata sample count does not match feature file");
        if (meta.dim_m1 != schema.dim_m1 || meta.dim_m2 != schema.dim_m2)
            throw LoadError("metadata dimensions do not match feature schema");
        if (schema.num_classes > 0 && meta.num_classes != schema.num_classes)
            throw LoadError("metadata class count does not match feature schema");
        ds.num_classes = meta.num_classes;
        ds.train_indices = std::move(meta.train);
        ds.test_indices = std::move(meta.test);
    } else {
        ds.num_classes = schema.num_classes > 0 ? schema.num_classes : max_label + 1;
        stratified_split(ds, 0.8, schema.split_seed);
    }
    try {
        ds.validate();
    } catch (const Error& e) {
        throw LoadError(e.what());
    }
    return ds;
}

void write_features_csv(std::ostream& out, const Dataset& ds) {
    out << "label";
    for (int d = 0; d < ds.dim_m1; ++d) out << ",m1_" << d;
    for (int d = 0; d < ds.dim_m2; ++d) out << ",m2_" << d;
    out << '\n';
    for (const auto& s : ds.samples) {
        out << s.label;
        for (Eigen::Index d = 0; d < s.x_m1.size(); ++d) out << ',' << format_double(s.x_m1[d]);
        for (Eigen::Index d = 0; d < s.x_m2.size(); ++d) out << ',' << format_double(s.x_m2[d]);
        out << '\n';
    }
}

void write_metadata(std::ostream& out, const Dataset& ds) {
    out << "format=bmmal-dataset-v1\n";
    out << "samples=" << ds.samples.size() << '\n';
    out << "classes=" << ds.num_classes << '\n';
    out << "dim_m1=" << ds.dim_m1 << '\n';
    out << "dim_m2=" << ds.dim_m2 << '\n';
    auto list = [&](const char* key, const std::vector<std::size_t>& idx) {
        out << key << '=';
        for (std::size_t i = 0; i < idx.size(); ++i) out << (i ? " " : "") << idx[i];
        out << '\n';
    };
    list("train", ds.train_indices);
    list("test", ds.test_indices);
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
    ds.validate();
    {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw Error("cannot write " + path.string());
        write_features_csv(out, ds);
        if (!out) throw Error("write failed for " + path.string());
    }
    std::ofstream meta(metadata_path(path), std::ios::binary);
    if (!meta) throw Error("cannot write " + metadata_path(path).string());
    write_metadata(meta, ds);
    if (!meta) throw Error("write failed for " + metadata_path(path).string());
}

} // namespace bmmal
