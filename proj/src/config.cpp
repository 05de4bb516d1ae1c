#include "bmmal/config.h"

#include "bmmal/error.h"

#include <fstream>
#include <initializer_list>
#include <limits>
#include <string>

namespace bmmal {

namespace {

using nlohmann::json;

class Section {
public:
    Section(const json& node, std::string path, std::initializer_list<const char*> allowed) : node_(node), path_(std::move(path)) {
        if (!node_.is_object()) fail("expected an object");
        for (const auto& [key, value] : node_.items()) {
            bool known = false;
            for (const char* a : allowed) known = known || key == a;
            if (!known) throw ConfigError(child(key) + ": unknown key");
        }
    }

    bool has(const char* key) const { return node_.contains(key); }
    const json& at(const char* key) const { return node_.at(key); }
    std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    template <typename Int>
    std::optional<Int> integer(const char* key, long long min_value) const {
        if (!has(key)) return std::nullopt;
        const json& v = at(key);
        if (!v.is_number_integer()) throw ConfigError(child(key) + ": expected an integer");
        if constexpr (std::is_unsigned_v<Int>) {
            if (v.is_number_unsigned()) {
                auto u = v.get<std::uint64_t>();
                if (u > static_cast<std::uint64_t>(std::numeric_limits<Int>::max()))
                    throw ConfigError(child(key) + ": value out of range");
                if (static_cast<long long>(std::min<std::uint64_t>(u, std::numeric_limits<long long>::max())) < min_value)
                    throw ConfigError(child(key) + ": must be at least " + std::to_string(min_value));
                return static_cast<Int>(u);
            }
        }
        auto s = v.get<long long>();
        if (s < min_value) throw ConfigError(child(key) + ": must be at least " + std::to_string(min_value));
        if (static_cast<unsigned long long>(s) > static_cast<unsigned long long>(std::numeric_limits<Int>::max()))
            throw ConfigError(child(key) + ": value out of range");
        return static_cast<Int>(s);
    }

    std::optional<double> number(const char* key) const {
        if (!has(key)) return std::nullopt;
        const json& v = at(key);
        if (!v.is_number()) throw ConfigError(child(key) + ": expected a number");
        return v.get<double>();
    }

    std::optional<std::string> string(const char* key) const {
        if (!has(key)) return std::nullopt;
        const json& v = at(key);
        if (!v.is_string()) throw ConfigError(child(key) + ": expected a string");
        return v.get<std::string>();
    }

    [[noreturn]] void fail(const std::string& msg) const { throw ConfigError((path_.empty() ? "config" : path_) + ": " + msg); }

private:
    const json& node_;
    std::string path_;
};

template <typename T>
void assign(T& target, const std::optional<T>& value) {
    if (value) target = *value;
}

// Re-throws a ConfigError raised by a validate() call with the section path.
template <typename Fn>
void checked(const std::string& path, Fn&& fn) {
    try {
        fn();
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

SynthConfig synth_section(const Section& s, std::optional<std::uint64_t> default_seed) {
    SynthConfig cfg;
    assign(cfg.n, s.integer<int>("n", 1));
    assign(cfg.num_classes, s.integer<int>("classes", 1));
    assign(cfg.dim_m1, s.integer<int>("dim_m1", 1));
    assign(cfg.dim_m2, s.integer<int>("dim_m2", 1));
    assign(cfg.snr_m1, s.number("snr_m1"));
    assign(cfg.snr_m2, s.number("snr_m2"));
    assign(cfg.dominant_fraction, s.number("dominant_fraction"));
    if (default_seed) cfg.seed = *default_seed;
    assign(cfg.seed, s.integer<std::uint64_t>("seed", 0));
    checked("data.synthetic", [&] { cfg.validate(); });
    return cfg;
}

constexpr std::initializer_list<const char*> kSynthKeys = {"n",      "classes", "dim_m1", "dim_m2",
                                                           "snr_m1", "snr_m2",  "dominant_fraction", "seed"};

} // namespace

json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

SynthConfig parse_synth_config(const json& doc, std::optional<std::uint64_t> seed_override) {
    Section top(doc, "", {"setting", "data", "model", "train", "experiment"});
    if (!top.has("data")) top.fail("missing data section");
    Section data(top.at("data"), "data", {"synthetic", "file"});
    if (!data.has("synthetic")) data.fail("missing synthetic section");
    std::optional<std::uint64_t> experiment_seed;
    if (top.has("experiment") && top.at("experiment").is_object() && top.at("experiment").contains("seed")) {
        Section exp(top.at("experiment"), "experiment",
                    {"strategy", "strategies", "initial_budget", "round_budget", "rounds", "split", "seed", "repetitions"});
        experiment_seed = exp.integer<std::uint64_t>("seed", 0);
    }
    SynthConfig cfg = synth_section(Section(data.at("synthetic"), "data.synthetic", kSynthKeys), experiment_seed);
    if (seed_override) cfg.seed = *seed_override;
    return cfg;
}

RunConfig parse_run_config(const json& doc, const ConfigOverrides& overrides, const std::filesystem::path& base_dir) {
    Section top(doc, "", {"setting", "data", "model", "train", "experiment"});
    ExperimentConfig base;
    assign(base.setting, top.string("setting"));

    if (!top.has("experiment")) top.fail("missing experiment section");
    Section exp(top.at("experiment"), "experiment",
                {"strategy", "strategies", "initial_budget", "round_budget", "rounds", "split", "seed", "repetitions"});
    assign(base.initial_budget, exp.integer<std::size_t>("initial_budget", 1));
    assign(base.round_budget, exp.integer<std::size_t>("round_budget", 1));
    assign(base.rounds, exp.integer<int>("rounds", 0));
    assign(base.split, exp.integer<std::size_t>("split", 1));
    assign(base.master_seed, exp.integer<std::uint64_t>("seed", 0));
    RunConfig out;
    assign(out.repetitions, exp.integer<int>("repetitions", 1));

    std::vector<std::string> strategy_names;
    if (exp.has("strategy") && exp.has("strategies")) exp.fail("give either strategy or strategies, not both");
    if (auto s = exp.string("strategy")) strategy_names.push_back(*s);
    if (exp.has("strategies")) {
        const json& list = exp.at("strategies");
        if (!list.is_array() || list.empty()) throw ConfigError("experiment.strategies: expected a non-empty array");
        for (std::size_t i = 0; i < list.size(); ++i) {
            if (!list[i].is_string())
                throw ConfigError("experiment.strategies[" + std::to_string(i) + "]: expected a string");
            strategy_names.push_back(list[i].get<std::string>());
        }
    }

    if (overrides.seed) base.master_seed = *overrides.seed;
    if (overrides.budget) base.round_budget = *overrides.budget;
    if (overrides.rounds) base.rounds = *overrides.rounds;
    if (overrides.split) base.split = *overrides.split;
    if (overrides.repetitions) out.repetitions = *overrides.repetitions;
    if (overrides.strategy) strategy_names = {*overrides.strategy};
    if (strategy_names.empty()) exp.fail("no strategy given");
    if (out.repetitions < 1) throw ConfigError("experiment.repetitions: must be positive");

    if (!top.has("data")) top.fail("missing data section");
    Section data(top.at("data"), "data", {"synthetic", "file"});
    if (data.has("synthetic") == data.has("file")) data.fail("expected exactly one of synthetic or file");
    if (data.has("synthetic")) {
        base.data = synth_section(Section(data.at("synthetic"), "data.synthetic", kSynthKeys), base.master_seed);
    } else {
        Section file(data.at("file"), "data.file", {"path", "dim_m1", "dim_m2", "classes", "split_seed"});
        FileSource src;
        auto path = file.string("path");
        if (!path) file.fail("missing path");
        src.path = *path;
        if (src.path.is_relative() && !base_dir.empty()) src.path = base_dir / src.path;
        auto d1 = file.integer<int>("dim_m1", 1);
        auto d2 = file.integer<int>("dim_m2", 1);
        if (!d1 || !d2) file.fail("dim_m1 and dim_m2 are required");
        src.schema.dim_m1 = *d1;
        src.schema.dim_m2 = *d2;
        assign(src.schema.num_classes, file.integer<int>("classes", 1));
        src.schema.split_seed = base.master_seed;
        assign(src.schema.split_seed, file.integer<std::uint64_t>("split_seed", 0));
        base.data = src;
    }

    if (top.has("model")) {
        Section model(top.at("model"), "model", {"fusion", "hidden_m1", "hidden_m2"});
        if (auto f = model.string("fusion")) checked("model.fusion", [&] { base.fusion = parse_fusion(*f); });
        assign(base.hidden_m1, model.integer<int>("hidden_m1", 0));
        assign(base.hidden_m2, model.integer<int>("hidden_m2", 0));
    }
    if (overrides.fusion) checked("--fusion", [&] { base.fusion = parse_fusion(*overrides.fusion); });

    if (top.has("train")) {
        Section tr(top.at("train"), "train", {"epochs", "batch_size", "learning_rate"});
        assign(base.train.epochs, tr.integer<int>("epochs", 1));
        assign(base.train.batch_size, tr.integer<int>("batch_size", 1));
        assign(base.train.learning_rate, tr.number("learning_rate"));
    }

    for (const auto& name : strategy_names) {
        ExperimentConfig cfg = base;
        checked("experiment.strategy", [&] { cfg.strategy = parse_strategy(name); });
        for (const auto& prior : out.experiments)
            if (prior.strategy == cfg.strategy) throw ConfigError("experiment.strategies: '" + name + "' listed twice");
        checked("experiment", [&] { cfg.validate(); });
        out.experiments.push_back(std::move(cfg));
    }
    return out;
}

RunConfig load_run_config(const std::filesystem::path& path, const ConfigOverrides& overrides) {
    return parse_run_config(read_json_file(path), overrides, path.parent_path());
}

} // namespace bmmal
