#include "bmmal/alloop.h"
#include "bmmal/config.h"
#include "bmmal/embedding.h"
#include "bmmal/error.h"
#include "bmmal/eval.h"
#include "bmmal/text.h"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace fs = std::filesystem;
using namespace bmmal;

namespace {

fs::path default_out_dir() {
    if (const char* env = std::getenv("BMMAL_OUT_DIR"); env && *env) return env;
    return "bmmal_out";
}

// Refuses to clobber existing outputs unless forced, then creates the directory.
void prepare_outputs(const fs::path& dir, const std::vector<fs::path>& files, bool force) {
    if (!force) {
        for (const auto& f : files)
            if (fs::exists(dir / f))
                throw Error("output " + (dir / f).string() + " already exists (use --force to overwrite)");
    }
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error("cannot create output directory " + dir.string() + ": " + ec.message());
}

std::ofstream open_output(const fs::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    return out;
}

void finish(std::ofstream& out, const fs::path& path) {
    out.flush();
    if (!out) throw Error("failed writing " + path.string());
}

std::string pct(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

struct CommonOptions {
    std::string out;
    bool force = false;
};

// generate

struct GenerateOptions : CommonOptions {
    std::string config;
    std::optional<std::uint64_t> seed;
};

int cmd_generate(const GenerateOptions& o) {
    const SynthConfig cfg = parse_synth_config(read_json_file(o.config), o.seed);
    const Dataset ds = generate_synthetic(cfg);
    const fs::path dir = o.out.empty() ? default_out_dir() : fs::path(o.out);
    prepare_outputs(dir, {"dataset.csv", "dataset.csv.meta"}, o.force);
    save_dataset(ds, dir / "dataset.csv");
    load_features(dir / "dataset.csv", {ds.dim_m1, ds.dim_m2, ds.num_classes, 0}).validate();
    std::cout << "generated " << (dir / "dataset.csv").string() << ": n=" << ds.size() << " classes=" << ds.num_classes
              << " dim_m1=" << ds.dim_m1 << " dim_m2=" << ds.dim_m2 << " train=" << ds.train_indices.size()
              << " test=" << ds.test_indices.size() << '\n';
    return 0;
}

// run

struct RunOptions : CommonOptions {
    std::string config;
    ConfigOverrides overrides;
    int threads = 0;
};

std::string checkpoint_name(const RunRecord& run) {
    return run.setting + "_" + std::string(to_string(run.strategy)) + "_rep" + std::to_string(run.repetition) + ".ckpt";
}

void write_summary(std::ostream& out, const ReportBundle& bundle) {
    out << "setting,strategy,round,labeled,mm_mean,mm_std,m1_mean,m1_std,m2_mean,m2_std,phi_m1_mean,phi_m1_std,"
           "phi_m2_mean,phi_m2_std\n";
    for (const auto& s : bundle.summaries) {
        for (const auto& r : s.rounds) {
            out << s.setting << ',' << to_string(s.strategy) << ',' << r.round << ',' << r.labeled;
            for (std::size_t c = 0; c < 3; ++c)
                out << ',' << format_double(r.accuracy_mean[c]) << ',' << format_double(r.accuracy_std[c]);
            for (std::size_t c = 0; c < 2; ++c)
                out << ',' << format_double(r.contribution_mean[c]) << ',' << format_double(r.contribution_std[c]);
            out << '\n';
        }
    }
}

int cmd_run(const RunOptions& o) {
    const RunConfig rc = load_run_config(o.config, o.overrides);
    const fs::path dir = o.out.empty() ? default_out_dir() : fs::path(o.out);
    const bool synthetic = std::holds_alternative<SynthConfig>(rc.experiments.front().data);

    std::vector<fs::path> files{"metrics.csv", "selection.ndjson", "summary.csv"};
    if (synthetic) {
        files.emplace_back("dataset.csv");
        files.emplace_back("dataset.csv.meta");
    }
    for (const auto& cfg : rc.experiments)
        for (int rep = 0; rep < rc.repetitions; ++rep) {
            RunRecord probe;
            probe.setting = cfg.setting;
            probe.strategy = cfg.strategy;
            probe.repetition = rep;
            files.push_back(fs::path("models") / checkpoint_name(probe));
        }
    prepare_outputs(dir, files, o.force);

    const int threads = o.threads > 0 ? o.threads : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    ReportBundle bundle = run_suite(rc.experiments, rc.repetitions, threads);

    const auto rows = metric_rows(bundle);
    {
        auto out = open_output(dir / "metrics.csv");
        write_metrics_csv(out, rows);
        finish(out, dir / "metrics.csv");
    }
    {
        auto out = open_output(dir / "selection.ndjson");
        for (const auto& run : bundle.runs)
            for (const auto& round : run.rounds)
                write_selection_log(out, {run.setting, run.strategy, run.repetition, round.round}, round.selection);
        finish(out, dir / "selection.ndjson");
    }
    {
        auto out = open_output(dir / "summary.csv");
        write_summary(out, bundle);
        finish(out, dir / "summary.csv");
    }
    fs::create_directories(dir / "models");
    for (const auto& run : bundle.runs) save_checkpoint(run.final_model, dir / "models" / checkpoint_name(run));
    if (synthetic) save_dataset(load_source(rc.experiments.front().data), dir / "dataset.csv");

    if (read_metrics_csv(dir / "metrics.csv").size() != rows.size())
        throw Error("metrics file " + (dir / "metrics.csv").string() + " did not read back intact");

    std::cout << "final round (mean over " << rc.repetitions << " repetition" << (rc.repetitions == 1 ? "" : "s")
              << "):\n";
    for (const auto& s : bundle.summaries) {
        const auto& last = s.rounds.back();
        std::cout << "  " << s.setting << '/' << to_string(s.strategy) << ": labeled=" << last.labeled
                  << " mm=" << pct(last.accuracy_mean[0]) << " m1=" << pct(last.accuracy_mean[1])
                  << " m2=" << pct(last.accuracy_mean[2]) << " phi=(" << pct(last.contribution_mean[0]) << ", "
                  << pct(last.contribution_mean[1]) << ")\n";
    }
    std::cout << "wrote " << dir.string() << '\n';
    return 0;
}

// compare

struct CompareOptions : CommonOptions {
    std::vector<std::string> inputs;
    std::string metric = "mm";
    double confidence = 0.9;
};

int cmd_compare(const CompareOptions& o) {
    const Metric metric = parse_metric(o.metric);
    std::vector<std::vector<MetricRow>> per_file;
    std::map<std::string, std::set<std::size_t>> owners;
    for (std::size_t f = 0; f < o.inputs.size(); ++f) {
        per_file.push_back(read_metrics_csv(o.inputs[f]));
        if (per_file.back().empty()) throw Error(o.inputs[f] + ": no metrics rows");
        for (const auto& r : per_file.back()) owners[r.setting + "\n" + r.strategy].insert(f);
    }
    // The same strategy coming from different files is kept apart.
    std::vector<MetricRow> rows;
    for (std::size_t f = 0; f < per_file.size(); ++f) {
        for (auto r : per_file[f]) {
            if (owners[r.setting + "\n" + r.strategy].size() > 1) r.strategy += "@" + o.inputs[f];
            rows.push_back(std::move(r));
        }
    }
    const auto series = series_from_rows(rows, metric);
    if (series.empty()) throw Error("metrics contain no query rounds to compare");
    const PairwiseMatrix m = pairwise_matrix(series, o.confidence);

    const fs::path dir = o.out.empty() ? default_out_dir() : fs::path(o.out);
    const fs::path name = "pairwise_" + std::string(to_string(metric)) + ".csv";
    prepare_outputs(dir, {name}, o.force);
    std::ostringstream text;
    write_pairwise_matrix(text, m);
    {
        auto out = open_output(dir / name);
        out << text.str();
        finish(out, dir / name);
    }
    std::cout << text.str() << "wrote " << (dir / name).string() << '\n';
    return 0;
}

// attribute

struct AttributeOptions : CommonOptions {
    std::string checkpoint;
    std::string data;
    bool embeddings = false;
};

int cmd_attribute(const AttributeOptions& o) {
    const ModelParams model = load_checkpoint(o.checkpoint);
    FeatureSchema schema;
    schema.dim_m1 = model.input_dim_m1;
    schema.dim_m2 = model.input_dim_m2;
    schema.num_classes = model.num_classes;
    const Dataset ds = load_features(o.data, schema);
    if (ds.num_classes != model.num_classes)
        throw DimensionError("dataset has " + std::to_string(ds.num_classes) + " classes, checkpoint expects " +
                             std::to_string(model.num_classes));

    const fs::path dir = o.out.empty() ? default_out_dir() : fs::path(o.out);
    std::vector<fs::path> files{"attributions.csv"};
    if (o.embeddings) {
        files.emplace_back("embeddings.bin");
        files.emplace_back("embeddings_modulated.bin");
    }
    prepare_outputs(dir, files, o.force);

    std::vector<char> in_test(ds.size(), 0);
    for (auto i : ds.test_indices) in_test[i] = 1;
    std::vector<GradientEmbedding> plain, modulated;
    auto out = open_output(dir / "attributions.csv");
    out << "index,split,label,pseudo_label,shapley_m1,shapley_m2,phi_m1,phi_m2,rho,w_m1,w_m2,degenerate\n";
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const ForwardResult fwd = forward(model, ds.samples[i]);
        const AttributionResult a = attribute(model, fwd);
        out << i << ',' << (in_test[i] ? "test" : "train") << ',' << ds.samples[i].label << ',' << a.pseudo_label << ','
            << format_double(a.phi[0]) << ',' << format_double(a.phi[1]) << ',' << format_double(a.contribution[0])
            << ',' << format_double(a.contribution[1]) << ',' << format_double(a.rho) << ','
            << format_double(a.weights[0]) << ',' << format_double(a.weights[1]) << ',' << (a.degenerate ? 1 : 0)
            << '\n';
        if (o.embeddings) {
            plain.push_back(gradient_embedding(model, fwd, i));
            modulated.push_back(modulated_embedding(model, fwd, i).embedding);
        }
    }
    finish(out, dir / "attributions.csv");
    if (o.embeddings) {
        write_embedding_matrix(dir / "embeddings.bin", plain);
        write_embedding_matrix(dir / "embeddings_modulated.bin", modulated);
    }
    std::cout << "attributed " << ds.size() << " samples; wrote " << (dir / "attributions.csv").string() << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Balanced multimodal active learning simulator"};
    app.require_subcommand(1);

    GenerateOptions gen;
    auto* g = app.add_subcommand("generate", "Write a synthetic two-modality dataset");
    g->add_option("--config", gen.config, "JSON config with a data.synthetic section")->required()->check(CLI::ExistingFile);
    g->add_option("--out", gen.out, "Output directory (default: $BMMAL_OUT_DIR or ./bmmal_out)");
    g->add_option("--seed", gen.seed, "Dataset seed");
    g->add_flag("--force", gen.force, "Overwrite existing outputs");

    RunOptions run;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> strategy, fusion;
    std::optional<std::size_t> budget, split;
    std::optional<int> rounds, reps;
    auto* r = app.add_subcommand("run", "Run the active-learning loop for every configured strategy");
    r->add_option("--config", run.config, "JSON experiment config")->required()->check(CLI::ExistingFile);
    r->add_option("--out", run.out, "Output directory (default: $BMMAL_OUT_DIR or ./bmmal_out)");
    r->add_option("--seed", seed, "Master seed");
    r->add_option("--strategy", strategy, "random, entropy, coreset, badge or bmmal");
    r->add_option("--budget", budget, "Per-round budget B")->check(CLI::PositiveNumber);
    r->add_option("--rounds", rounds, "Number of query rounds L")->check(CLI::NonNegativeNumber);
    r->add_option("--split", split, "Sub-pool count S")->check(CLI::PositiveNumber);
    r->add_option("--fusion", fusion, "concat or sum");
    r->add_option("--reps", reps, "Repetitions R")->check(CLI::PositiveNumber);
    r->add_option("--threads", run.threads, "Worker threads (default: all cores)")->check(CLI::NonNegativeNumber);
    r->add_flag("--force", run.force, "Overwrite existing outputs");

    CompareOptions cmp;
    auto* c = app.add_subcommand("compare", "Pairwise significance matrix from metrics files");
    c->add_option("metrics", cmp.inputs, "metrics.csv files")->required();
    c->add_option("--out", cmp.out, "Output directory (default: $BMMAL_OUT_DIR or ./bmmal_out)");
    c->add_option("--metric", cmp.metric, "mm, m1 or m2")->capture_default_str();
    c->add_option("--confidence", cmp.confidence, "Two-sided confidence level")->capture_default_str();
    c->add_flag("--force", cmp.force, "Overwrite existing outputs");

    AttributeOptions att;
    auto* a = app.add_subcommand("attribute", "Per-sample Shapley attribution of a trained checkpoint");
    a->add_option("--checkpoint", att.checkpoint, "Model checkpoint")->required();
    a->add_option("--data", att.data, "Feature CSV")->required();
    a->add_option("--out", att.out, "Output directory (default: $BMMAL_OUT_DIR or ./bmmal_out)");
    a->add_flag("--embeddings", att.embeddings, "Also dump plain and modulated gradient embeddings");
    a->add_flag("--force", att.force, "Overwrite existing outputs");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*g) return cmd_generate(gen);
        if (*r) {
            run.overrides = {seed, strategy, budget, rounds, split, fusion, reps};
            return cmd_run(run);
        }
        if (*c) return cmd_compare(cmp);
        if (*a) return cmd_attribute(att);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
