#include "bmmal/alloop.h"
#include "bmmal/error.h"

#include "helpers.h"

#include <doctest.h>

#include <algorithm>
#include <set>
#include <sstream>

using namespace bmmal;

namespace {

ExperimentConfig small_config(Strategy strategy, std::uint64_t seed = 7) {
    ExperimentConfig cfg;
    cfg.setting = "small";
    cfg.data = testing::dominant_config(seed, 300);
    cfg.strategy = strategy;
    cfg.initial_budget = 20;
    cfg.round_budget = 10;
    cfg.rounds = 3;
    cfg.train.epochs = 8;
    cfg.master_seed = seed;
    return cfg;
}

std::string metrics_text(const ReportBundle& bundle) {
    std::ostringstream out;
    write_metrics_csv(out, metric_rows(bundle));
    return out.str();
}

std::vector<std::size_t> sorted(std::vector<std::size_t> v) {
    std::sort(v.begin(), v.end());
    return v;
}

} // namespace

TEST_CASE("zero rounds give only the initial report") {
    auto cfg = small_config(Strategy::Badge);
    cfg.rounds = 0;
    auto run = run_experiment(cfg);
    REQUIRE(run.rounds.size() == 1);
    CHECK(run.rounds[0].round == 0);
    CHECK(run.rounds[0].labeled_size == 20);
    CHECK(run.rounds[0].selected.size() == 20);
    CHECK(run.rounds[0].selection.empty());
}

TEST_CASE("strategies share the round-0 pool for one master seed") {
    std::vector<std::size_t> first;
    for (Strategy s : kAllStrategies) {
        auto cfg = small_config(s);
        cfg.rounds = 1;
        auto run = run_experiment(cfg);
        if (first.empty()) first = run.rounds[0].selected;
        CHECK(run.rounds[0].selected == first);
    }
    auto other = small_config(Strategy::Random, 7);
    other.master_seed = 8;
    other.rounds = 0;
    CHECK(run_experiment(other).rounds[0].selected != first);
}

TEST_CASE("pool bookkeeping across rounds") {
    for (Strategy s : kAllStrategies) {
        CAPTURE(to_string(s));
        auto cfg = small_config(s);
        if (s == Strategy::Bmmal) cfg.split = 2;
        const Dataset ds = load_source(cfg.data);
        auto run = run_experiment(cfg, ds);
        REQUIRE(run.rounds.size() == 4);
        const std::set<std::size_t> train(ds.train_indices.begin(), ds.train_indices.end());
        std::set<std::size_t> labeled;
        for (const auto& r : run.rounds) {
            CHECK(r.labeled_size == 20 + static_cast<std::size_t>(r.round) * 10);
            for (auto i : r.selected) {
                CHECK(train.count(i) == 1);
                CHECK(labeled.insert(i).second);
            }
            CHECK(labeled.size() == r.labeled_size);
            CHECK(r.accuracy.mm >= 0.0);
            CHECK(r.accuracy.mm <= 1.0);
            CHECK(std::abs(r.mean_contribution[0] + r.mean_contribution[1] - 1.0) <= 1e-9);
            CHECK(r.subset_stats.subsets[0].count + r.subset_stats.subsets[1].count == ds.test_indices.size());
            if (r.round > 0) {
                CHECK(r.selection.size() == 10);
                CHECK(r.selected.size() == 10);
            }
        }
    }
}

TEST_CASE("runs are deterministic and use derived seeds per repetition") {
    std::vector<ExperimentConfig> cfgs{small_config(Strategy::Random), small_config(Strategy::Bmmal)};
    auto a = run_suite(cfgs, 3);
    auto b = run_suite(cfgs, 3, 3);
    CHECK(metrics_text(a) == metrics_text(b));
    REQUIRE(a.runs.size() == 6);
    REQUIRE(a.summaries.size() == 2);
    for (std::size_t i = 0; i < a.runs.size(); ++i)
        for (std::size_t t = 0; t < a.runs[i].rounds.size(); ++t)
            CHECK(a.runs[i].rounds[t].selected == b.runs[i].rounds[t].selected);

    std::set<std::vector<std::size_t>> pools;
    for (int rep = 0; rep < 3; ++rep) pools.insert(sorted(a.runs[static_cast<std::size_t>(rep)].rounds[0].selected));
    CHECK(pools.size() == 3);
    // Repetition r of both configs share its round-0 pool.
    CHECK(a.runs[1].rounds[0].selected == a.runs[4].rounds[0].selected);
}

TEST_CASE("single repetition summary equals the run and has zero spread") {
    std::vector<ExperimentConfig> cfgs{small_config(Strategy::Entropy)};
    auto bundle = run_suite(cfgs, 1);
    REQUIRE(bundle.runs.size() == 1);
    const auto& run = bundle.runs[0];
    auto single = run_experiment(cfgs[0]);
    const auto& summary = bundle.summaries[0];
    REQUIRE(summary.rounds.size() == run.rounds.size());
    for (std::size_t t = 0; t < run.rounds.size(); ++t) {
        CHECK(summary.rounds[t].accuracy_mean[0] == run.rounds[t].accuracy.mm);
        CHECK(summary.rounds[t].accuracy_mean[0] == single.rounds[t].accuracy.mm);
        CHECK(summary.rounds[t].accuracy_std[0] == 0.0);
        CHECK(summary.rounds[t].contribution_std[1] == 0.0);
    }

    // Identical copies of one run average to itself with zero spread.
    std::vector<RunRecord> copies(4, run);
    auto s = summarize(copies);
    for (std::size_t t = 0; t < run.rounds.size(); ++t) {
        CHECK(s.rounds[t].accuracy_mean[1] == doctest::Approx(run.rounds[t].accuracy.m1).epsilon(1e-15));
        CHECK(s.rounds[t].accuracy_std[1] == 0.0);
    }
}

TEST_CASE("experiment config validation") {
    auto cfg = small_config(Strategy::Random);
    const Dataset ds = load_source(cfg.data);
    cfg.round_budget = 100;
    CHECK_THROWS_AS(run_experiment(cfg, ds), ConfigError);
    cfg = small_config(Strategy::Random);
    cfg.split = 3;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = small_config(Strategy::Random);
    cfg.setting = "a,b";
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = small_config(Strategy::Random);
    cfg.initial_budget = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    std::vector<ExperimentConfig> none{small_config(Strategy::Random)};
    CHECK_THROWS_AS(run_suite(none, 0), ConfigError);
}

TEST_CASE("query failures carry round context") {
    auto cfg = small_config(Strategy::Badge);
    Dataset ds = load_source(cfg.data);
    cfg.rounds = 0;
    const auto pool = run_experiment(cfg, ds).rounds[0].selected;
    // A malformed sample outside the seed pool only surfaces when queried.
    for (auto i : ds.train_indices) {
        if (std::find(pool.begin(), pool.end(), i) == pool.end()) {
            ds.samples[i].x_m1 = Eigen::VectorXd::Zero(3);
            break;
        }
    }
    cfg.rounds = 2;
    try {
        run_experiment(cfg, ds);
        FAIL("expected a query failure");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("round 1") != std::string::npos);
        CHECK(std::string(e.what()).find("badge") != std::string::npos);
    }
}
