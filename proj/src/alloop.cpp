#include "bmmal/alloop.h"

#include "bmmal/attribution.h"
#include "bmmal/error.h"
#include "bmmal/random.h"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <thread>

namespace bmmal {

namespace {

enum SeedPurpose : std::uint64_t { kInitialPool = 1, kModelInit = 2, kTrainShuffle = 3, kQuery = 4 };

double elapsed_ms(std::chrono::steady_clock::time_point since) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

std::array<double, 2> mean_std(const std::vector<double>& v) {
    const double n = static_cast<double>(v.size());
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= n;
    if (v.size() < 2) return {mean, 0.0};
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / (n - 1.0))};
}

} // namespace

Dataset load_source(const DataSource& source) {
    if (const auto* synth = std::get_if<SynthConfig>(&source)) return generate_synthetic(*synth);
    const auto& file = std::get<FileSource>(source);
    return load_features(file.path, file.schema);
}

void ExperimentConfig::validate() const {
    if (setting.empty() || setting.find_first_of(",\n\r") != std::string::npos)
        throw ConfigError("setting name must be non-empty and free of commas and newlines");
    if (rounds < 0) throw ConfigError("experiment.rounds must be non-negative");
    if (initial_budget == 0) throw ConfigError("experiment.initial_budget must be positive");
    if (rounds > 0 && round_budget == 0) throw ConfigError("experiment.round_budget must be positive");
    if (split == 0 || (rounds > 0 && round_budget % split != 0))
        throw ConfigError("experiment.split must divide experiment.round_budget");
    if (hidden_m1 < 0 || hidden_m2 < 0) throw ConfigError("model hidden sizes must be non-negative");
    train.validate();
}

void ExperimentConfig::validate(const Dataset& ds) const {
    validate();
    const std::size_t needed = initial_budget + static_cast<std::size_t>(rounds) * round_budget;
    if (needed > ds.train_indices.size())
        throw ConfigError("labelling budget " + std::to_string(needed) + " exceeds the train split of " +
                          std::to_string(ds.train_indices.size()));
    if (ds.test_indices.empty()) throw ConfigError("dataset has an empty test split");
}

RunRecord run_experiment(const ExperimentConfig& cfg, const Dataset& ds, int repetition) {
    cfg.validate(ds);
    const std::uint64_t rep_seed = derive_seed(cfg.master_seed, {static_cast<std::uint64_t>(repetition)});

    std::vector<std::size_t> shuffled = ds.train_indices;
    {
        Rng rng(derive_seed(rep_seed, {kInitialPool}));
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
    }
    const auto init_end = shuffled.begin() + static_cast<std::ptrdiff_t>(cfg.initial_budget);
    std::vector<std::size_t> labeled(shuffled.begin(), init_end);
    std::vector<std::size_t> unlabeled(init_end, shuffled.end());
    std::sort(unlabeled.begin(), unlabeled.end());

    const ModelDims dims{ds.dim_m1, ds.dim_m2, cfg.hidden_m1, cfg.hidden_m2, ds.num_classes};

    RunRecord record;
    record.setting = cfg.setting;
    record.strategy = cfg.strategy;
    record.repetition = repetition;

    ModelParams model;
    for (int round = 0; round <= cfg.rounds; ++round) {
        const auto start = std::chrono::steady_clock::now();
        const auto r = static_cast<std::uint64_t>(round);
        RoundReport report;
        report.round = round;

        if (round == 0) {
            report.selected = labeled;
        } else {
            QueryRequest req;
            req.unlabeled = unlabeled;
            req.labeled = labeled;
            req.budget = cfg.round_budget;
            req.seed = derive_seed(rep_seed, {r, kQuery});
            req.strategy = cfg.strategy;
            req.split = cfg.split;
            QueryResult q;
            try {
                q = run_query(req, model, ds);
            } catch (const Error& e) {
                throw Error(std::string(to_string(cfg.strategy)) + " query failed in round " + std::to_string(round) +
                            " of repetition " + std::to_string(repetition) + ": " + e.what());
            }
            labeled.insert(labeled.end(), q.selected.begin(), q.selected.end());
            std::vector<std::size_t> picked = q.selected;
            std::sort(picked.begin(), picked.end());
            std::vector<std::size_t> rest;
            rest.reserve(unlabeled.size() - picked.size());
            std::set_difference(unlabeled.begin(), unlabeled.end(), picked.begin(), picked.end(), std::back_inserter(rest));
            unlabeled = std::move(rest);
            report.selected = std::move(q.selected);
            report.selection = std::move(q.records);
        }

        TrainConfig tc = cfg.train;
        tc.seed = derive_seed(rep_seed, {r, kTrainShuffle});
        model = train(init_model(dims, cfg.fusion, derive_seed(rep_seed, {r, kModelInit})), ds, labeled, tc).params;

        report.labeled_size = labeled.size();
        report.accuracy = evaluate(model, ds, ds.test_indices);
        const auto attributions = attribute_all(model, ds, ds.test_indices);
        report.mean_contribution = mean_contribution(attributions);
        report.subset_stats = dominated_subset_stats(attributions);
        report.wall_ms = elapsed_ms(start);
        record.rounds.push_back(std::move(report));
    }
    record.final_model = std::move(model);
    return record;
}

RunRecord run_experiment(const ExperimentConfig& cfg, int repetition) {
    return run_experiment(cfg, load_source(cfg.data), repetition);
}

ConfigSummary summarize(std::span<const RunRecord> runs) {
    ConfigSummary summary;
    if (runs.empty()) return summary;
    summary.setting = runs.front().setting;
    summary.strategy = runs.front().strategy;
    const std::size_t rounds = runs.front().rounds.size();
    for (const auto& run : runs)
        if (run.rounds.size() != rounds) throw ConfigError("runs disagree on the number of rounds");
    for (std::size_t t = 0; t < rounds; ++t) {
        RoundAggregate agg;
        agg.round = static_cast<int>(t);
        agg.labeled = runs.front().rounds[t].labeled_size;
        std::array<std::vector<double>, 5> columns;
        for (const auto& run : runs) {
            const auto& rep = run.rounds[t];
            columns[0].push_back(rep.accuracy.mm);
            columns[1].push_back(rep.accuracy.m1);
            columns[2].push_back(rep.accuracy.m2);
            columns[3].push_back(rep.mean_contribution[0]);
            columns[4].push_back(rep.mean_contribution[1]);
        }
        for (std::size_t c = 0; c < 3; ++c) {
            auto [m, s] = mean_std(columns[c]);
            agg.accuracy_mean[c] = m;
            agg.accuracy_std[c] = s;
        }
        for (std::size_t c = 0; c < 2; ++c) {
            auto [m, s] = mean_std(columns[3 + c]);
            agg.contribution_mean[c] = m;
            agg.contribution_std[c] = s;
        }
        summary.rounds.push_back(agg);
    }
    return summary;
}

ReportBundle run_suite(std::span<const ExperimentConfig> cfgs, int repetitions, int threads) {
    if (repetitions < 1) throw ConfigError("repetitions must be positive");
    std::vector<Dataset> datasets;
    datasets.reserve(cfgs.size());
    for (const auto& cfg : cfgs) {
        Dataset ds = load_source(cfg.data);
        cfg.validate(ds);
        datasets.push_back(std::move(ds));
    }

    const std::size_t reps = static_cast<std::size_t>(repetitions);
    const std::size_t jobs = cfgs.size() * reps;
    std::vector<RunRecord> runs(jobs);
    std::vector<std::exception_ptr> errors(jobs);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t job = next++; job < jobs; job = next++) {
            const std::size_t c = job / reps;
            try {
                runs[job] = run_experiment(cfgs[c], datasets[c], static_cast<int>(job % reps));
            } catch (...) {
                errors[job] = std::current_exception();
            }
        }
    };
    const auto n_threads = static_cast<std::size_t>(std::max(1, threads));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < std::min(n_threads, jobs); ++t) pool.emplace_back(worker);
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    ReportBundle bundle;
    for (std::size_t c = 0; c < cfgs.size(); ++c)
        bundle.summaries.push_back(summarize(std::span<const RunRecord>(runs).subspan(c * reps, reps)));
    bundle.runs = std::move(runs);
    return bundle;
}

std::vector<MetricRow> metric_rows(const ReportBundle& bundle) {
    std::vector<MetricRow> rows;
    for (const auto& run : bundle.runs) {
        for (const auto& rep : run.rounds) {
            MetricRow row;
            row.setting = run.setting;
            row.strategy = std::string(to_string(run.strategy));
            row.repetition = run.repetition;
            row.round = rep.round;
            row.labeled = rep.labeled_size;
            row.mm_top1 = rep.accuracy.mm;
            row.m1_top1 = rep.accuracy.m1;
            row.m2_top1 = rep.accuracy.m2;
            row.phi_m1 = rep.mean_contribution[0];
            row.phi_m2 = rep.mean_contribution[1];
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

} // namespace bmmal
