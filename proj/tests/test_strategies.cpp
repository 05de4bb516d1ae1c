#include "bmmal/error.h"
#include "bmmal/strategies.h"

#include "helpers.h"
#include "oracles.h"

#include <doctest.h>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

using namespace bmmal;

namespace {

// Identity encoders, concat fusion; sample i has x_m1 = points[i], x_m2 = 0.
Dataset point_dataset(const std::vector<Eigen::VectorXd>& points, int num_classes = 2) {
    Dataset ds;
    ds.num_classes = num_classes;
    ds.dim_m1 = static_cast<int>(points.front().size());
    ds.dim_m2 = 1;
    for (std::size_t i = 0; i < points.size(); ++i) {
        ds.samples.push_back({points[i], Eigen::VectorXd::Zero(1), static_cast<int>(i) % num_classes});
        ds.train_indices.push_back(i);
    }
    return ds;
}

std::vector<std::size_t> iota_vec(std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), std::size_t{0});
    return v;
}

struct Trained {
    Dataset ds;
    ModelParams model;
};

const Trained& trained_fixture() {
    static const Trained t = [] {
        Trained out;
        out.ds = generate_synthetic(testing::dominant_config(4, 500));
        std::vector<std::size_t> labeled(out.ds.train_indices.begin(), out.ds.train_indices.begin() + 80);
        TrainConfig tc;
        tc.epochs = 15;
        out.model = train(init_model({8, 8, 0, 0, 4}, Fusion::Concat, 1), out.ds, labeled, tc).params;
        return out;
    }();
    return t;
}

QueryRequest pool_request(const Dataset& ds, std::size_t labeled_count, std::size_t budget, std::uint64_t seed) {
    QueryRequest req;
    req.labeled.assign(ds.train_indices.begin(), ds.train_indices.begin() + static_cast<std::ptrdiff_t>(labeled_count));
    req.unlabeled.assign(ds.train_indices.begin() + static_cast<std::ptrdiff_t>(labeled_count), ds.train_indices.end());
    std::sort(req.unlabeled.begin(), req.unlabeled.end());
    req.budget = budget;
    req.seed = seed;
    return req;
}

} // namespace

TEST_CASE("strategy names round-trip") {
    for (Strategy s : kAllStrategies) CHECK(parse_strategy(to_string(s)) == s);
    CHECK_THROWS_AS(parse_strategy("bald"), ConfigError);
}

TEST_CASE("request validation") {
    QueryRequest req;
    req.unlabeled = {1, 2, 3, 4};
    req.labeled = {0};
    req.budget = 2;
    CHECK_NOTHROW(req.validate());
    req.budget = 0;
    CHECK_THROWS_AS(req.validate(), ConfigError);
    req.budget = 5;
    CHECK_THROWS_AS(req.validate(), ConfigError);
    req.budget = 4;
    req.split = 3;
    CHECK_THROWS_AS(req.validate(), ConfigError);
    req.split = 8;
    CHECK_THROWS_AS(req.validate(), ConfigError);
    req.split = 2;
    req.labeled = {3};
    CHECK_THROWS_AS(req.validate(), ConfigError);
    req.labeled = {};
    req.unlabeled = {1, 1, 2, 3};
    CHECK_THROWS_AS(req.validate(), ConfigError);
}

TEST_CASE("every strategy returns B distinct pool indices and is deterministic") {
    const auto& t = trained_fixture();
    for (Strategy s : kAllStrategies) {
        for (std::size_t split : {1u, 5u}) {
            CAPTURE(to_string(s));
            CAPTURE(split);
            QueryRequest req = pool_request(t.ds, 40, 20, 17);
            req.strategy = s;
            req.split = split;
            auto a = run_query(req, t.model, t.ds);
            auto b = run_query(req, t.model, t.ds);
            CHECK(a.selected == b.selected);
            REQUIRE(a.selected.size() == 20);
            REQUIRE(a.records.size() == 20);
            std::set<std::size_t> unique(a.selected.begin(), a.selected.end());
            CHECK(unique.size() == 20);
            for (std::size_t i = 0; i < a.selected.size(); ++i) {
                CHECK(std::binary_search(req.unlabeled.begin(), req.unlabeled.end(), a.selected[i]));
                CHECK(a.records[i].index == a.selected[i]);
                const auto attr = attribute(t.model, t.ds.samples[a.selected[i]]);
                CHECK(a.records[i].contribution == attr.contribution);
                CHECK(a.records[i].rho == attr.rho);
            }
            if (s != Strategy::Random) continue;
            req.seed = 18;
            CHECK(run_query(req, t.model, t.ds).selected != a.selected);
        }
    }
}

TEST_CASE("random: whole pool when the budget equals its size") {
    QueryRequest req;
    req.unlabeled = {4, 9, 2, 7};
    req.budget = 4;
    req.seed = 3;
    auto r = select_random(req);
    std::vector<std::size_t> sorted = r.selected;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == std::vector<std::size_t>{2, 4, 7, 9});
}

TEST_CASE("entropy ranks the uniform prediction first and matches a direct recomputation") {
    std::vector<Eigen::VectorXd> points;
    Rng rng(5);
    for (int i = 0; i < 8; ++i) points.push_back(testing::random_vector(rng, 4, 3.0));
    points[5].setZero();
    points[2] = Eigen::VectorXd::Unit(4, 1) * 50.0;
    Dataset ds = point_dataset(points, 4);
    ds.dim_m2 = 1;
    auto m = zeros_like(init_model({4, 1, 0, 0, 4}, Fusion::Concat, 0));
    m.head_mm.weight.leftCols(4) = Eigen::MatrixXd::Identity(4, 4);

    QueryRequest req;
    req.unlabeled = iota_vec(8);
    req.budget = 8;
    auto r = select_entropy(req, m, ds);
    CHECK(r.selected.front() == 5);
    CHECK(r.records.front().score == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    CHECK(r.selected.back() == 2);
    CHECK(r.records.back().score < 1e-12);
    for (std::size_t i = 0; i < r.records.size(); ++i) {
        if (i > 0) CHECK(r.records[i - 1].score >= r.records[i].score);
        Eigen::VectorXd f = points[r.selected[i]];
        Eigen::VectorXd p = (f.array() - f.maxCoeff()).exp();
        p /= p.sum();
        double h = 0.0;
        for (Eigen::Index k = 0; k < 4; ++k)
            if (p[k] > 0.0) h -= p[k] * std::log(p[k]);
        CHECK(std::abs(r.records[i].score - h) <= 1e-12);
    }

    // Equal scores resolve to the lower index.
    Dataset flat = point_dataset(std::vector<Eigen::VectorXd>(5, Eigen::VectorXd::Zero(4)), 4);
    req.unlabeled = {4, 1, 3};
    req.budget = 2;
    CHECK(select_entropy(req, m, flat).selected == std::vector<std::size_t>{1, 3});
}

TEST_CASE("coreset picks the farthest point") {
    std::vector<Eigen::VectorXd> points{Eigen::VectorXd::Constant(1, 0.0), Eigen::VectorXd::Constant(1, 1.0),
                                        Eigen::VectorXd::Constant(1, 10.0)};
    Dataset ds = point_dataset(points);
    auto m = zeros_like(init_model({1, 1, 0, 0, 2}, Fusion::Concat, 0));
    QueryRequest req;
    req.labeled = {0};
    req.unlabeled = {1, 2};
    req.budget = 1;
    auto r = select_coreset(req, m, ds);
    CHECK(r.selected == std::vector<std::size_t>{2});
    CHECK(r.records[0].score == doctest::Approx(10.0));

    req.budget = 2;
    auto all = select_coreset(req, m, ds);
    CHECK(all.selected == std::vector<std::size_t>{2, 1});

    req.labeled = {};
    req.unlabeled = {0, 1, 2};
    req.budget = 1;
    CHECK(select_coreset(req, m, ds).selected == std::vector<std::size_t>{2});
}

TEST_CASE("coreset greedy property against brute force") {
    Rng rng(41);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t n = 8;
        std::vector<Eigen::VectorXd> points;
        for (std::size_t i = 0; i < n; ++i) points.push_back(testing::random_vector(rng, 2, 2.0));
        Dataset ds = point_dataset(points);
        ds.dim_m1 = 2;
        auto m = zeros_like(init_model({2, 1, 0, 0, 2}, Fusion::Concat, 0));
        QueryRequest req;
        if (trial % 2) req.labeled = {0};
        for (std::size_t i = req.labeled.size(); i < n; ++i) req.unlabeled.push_back(i);
        req.budget = 3;
        auto r = select_coreset(req, m, ds);

        std::vector<std::size_t> centers = req.labeled;
        for (auto pick : r.selected) {
            // Each pick attains the largest distance to the current centers.
            auto dist = [&](std::size_t i) {
                double best = std::numeric_limits<double>::infinity();
                for (auto c : centers) best = std::min(best, (points[i] - points[c]).norm());
                return best;
            };
            double farthest = 0.0;
            for (auto i : req.unlabeled)
                if (std::find(centers.begin(), centers.end(), i) == centers.end())
                    farthest = std::max(farthest, centers.empty() ? points[i].norm() : dist(i));
            CHECK((centers.empty() ? points[pick].norm() : dist(pick)) == doctest::Approx(farthest).epsilon(1e-12));
            centers.push_back(pick);
        }

        // Greedy k-center stays within twice the exhaustive optimum.
        double optimum = std::numeric_limits<double>::infinity();
        const auto& pool = req.unlabeled;
        for (std::size_t a = 0; a < pool.size(); ++a)
            for (std::size_t b = a + 1; b < pool.size(); ++b)
                for (std::size_t c = b + 1; c < pool.size(); ++c) {
                    std::vector<std::size_t> trial_centers = req.labeled;
                    trial_centers.insert(trial_centers.end(), {pool[a], pool[b], pool[c]});
                    optimum = std::min(optimum, oracle::cover_radius(points, trial_centers));
                }
        CHECK(oracle::cover_radius(points, centers) <= 2.0 * optimum + 1e-12);
    }
}

TEST_CASE("kmeans++ seeding") {
    Rng rng(2);
    std::vector<Eigen::VectorXd> points;
    for (int i = 0; i < 12; ++i) points.push_back(testing::random_vector(rng, 3));
    std::size_t argmax_norm = 0;
    for (std::size_t i = 0; i < points.size(); ++i)
        if (points[i].norm() > points[argmax_norm].norm()) argmax_norm = i;

    auto all = kmeanspp_seed(points, 12, 9);
    CHECK(std::set<std::size_t>(all.picks.begin(), all.picks.end()).size() == 12);
    CHECK(kmeanspp_seed(points, 1, 9).picks == std::vector<std::size_t>{argmax_norm});
    CHECK(kmeanspp_seed(points, 5, 9).picks == kmeanspp_seed(points, 5, 9).picks);
    CHECK_THROWS_AS(kmeanspp_seed(points, 13, 9), ConfigError);

    std::vector<Eigen::VectorXd> cluster(99, Eigen::VectorXd::Zero(2));
    cluster.push_back(Eigen::VectorXd::Constant(2, 10.0));
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        auto picks = kmeanspp_seed(cluster, 2, seed).picks;
        CHECK(std::find(picks.begin(), picks.end(), 99) != picks.end());
    }

    std::vector<Eigen::VectorXd> zeros(6, Eigen::VectorXd::Zero(3));
    auto fb = kmeanspp_seed(zeros, 4, 1);
    CHECK(fb.fallback);
    CHECK(fb.picks.front() == 0);
    CHECK(std::set<std::size_t>(fb.picks.begin(), fb.picks.end()).size() == 4);
    CHECK_FALSE(kmeanspp_seed(points, 4, 1).fallback);
}

TEST_CASE("kmeans++ second pick follows D-squared sampling") {
    // First pick (0,5); remaining squared distances 1 and 9.
    std::vector<Eigen::VectorXd> points{Eigen::Vector2d(0, 4), Eigen::Vector2d(0, 5), Eigen::Vector2d(0, 2)};
    int far = 0;
    const int trials = 4000;
    for (int seed = 0; seed < trials; ++seed) {
        auto picks = kmeanspp_seed(points, 2, static_cast<std::uint64_t>(seed)).picks;
        REQUIRE(picks.front() == 1);
        far += picks[1] == 2 ? 1 : 0;
    }
    const double freq = static_cast<double>(far) / trials;
    // 0.9 expected; four standard errors is about 0.019.
    CHECK(std::abs(freq - 0.9) <= 0.02);
}

TEST_CASE("badge never starts with a near-zero embedding") {
    const auto& t = trained_fixture();
    QueryRequest req = pool_request(t.ds, 40, 10, 3);
    auto m = t.model;
    // Push one pool sample to a confident prediction by giving it a huge input.
    Dataset ds = t.ds;
    const std::size_t target = req.unlabeled.front();
    // Input solving W_mm x = 1e4 * e_0 gives a one-hot prediction.
    Eigen::VectorXd x = m.head_mm.weight.completeOrthogonalDecomposition().solve(Eigen::VectorXd::Unit(4, 0) * 1e4);
    ds.samples[target].x_m1 = x.head(8);
    ds.samples[target].x_m2 = x.tail(8);
    REQUIRE(gradient_embedding(m, ds.samples[target]).norm < 1e-12);
    auto r = select_badge(req, m, ds);
    CHECK(r.selected.front() != target);
    CHECK(r.selected == select_badge(req, m, ds).selected);
    CHECK(r.peak_embedding_rows == req.unlabeled.size());
    CHECK(r.embedding_dim == 4u * 16u);

    req.unlabeled.resize(10);
    auto whole = select_badge(req, m, ds);
    std::vector<std::size_t> sorted = whole.selected;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == req.unlabeled);
}

TEST_CASE("bmmal equals badge bit for bit when every sample is balanced") {
    // Identical modality blocks and inputs give phi_m1 == phi_m2 exactly.
    Rng rng(13);
    auto m = testing::random_model(rng, {5, 5, 0, 0, 3}, Fusion::Concat);
    m.head_mm.weight.rightCols(5) = m.head_mm.weight.leftCols(5);
    Dataset ds;
    ds.num_classes = 3;
    ds.dim_m1 = 5;
    ds.dim_m2 = 5;
    for (std::size_t i = 0; i < 60; ++i) {
        Eigen::VectorXd x = testing::random_vector(rng, 5, 1.5);
        ds.samples.push_back({x, x, static_cast<int>(i % 3)});
        ds.train_indices.push_back(i);
    }
    QueryRequest req;
    req.unlabeled = iota_vec(60);
    req.budget = 12;
    req.seed = 99;
    auto badge = select_badge(req, m, ds);
    auto bmmal = select_bmmal(req, m, ds);
    CHECK(bmmal.selected == badge.selected);
    REQUIRE(bmmal.pool.size() == 60);
    for (const auto& rec : bmmal.pool) {
        CHECK(rec.rho == 0.0);
        CHECK(rec.weights == std::array<double, 2>{1.0, 1.0});
    }
    for (std::size_t i = 0; i < badge.records.size(); ++i) CHECK(bmmal.records[i].score == badge.records[i].score);
}

TEST_CASE("modulation favours the balanced one of two identical embeddings") {
    const Eigen::VectorXd c = (Eigen::VectorXd(3) << -0.4, 0.3, 0.1).finished();
    const Eigen::VectorXd z1 = (Eigen::VectorXd(2) << 1.0, 2.0).finished();
    const Eigen::VectorXd z2 = (Eigen::VectorXd(2) << -0.5, 1.5).finished();
    auto balanced = build_embedding(c, z1, z2, modulation_weights({0.5, 0.5}), Fusion::Concat, 0, true);
    auto skewed = build_embedding(c, z1, z2, modulation_weights({0.9, 0.1}), Fusion::Concat, 1, true);
    CHECK(balanced.norm > skewed.norm);
    std::vector<Eigen::VectorXd> pts{skewed.values, balanced.values};
    CHECK(kmeanspp_seed(pts, 1, 0).picks == std::vector<std::size_t>{1});
}

TEST_CASE("pool splitting") {
    const auto& t = trained_fixture();
    QueryRequest req = pool_request(t.ds, 40, 10, 21);
    req.strategy = Strategy::Bmmal;
    StrategyFn fn = [&](const QueryRequest& r) { return select_bmmal(r, t.model, t.ds); };

    auto direct = fn(req);
    auto s1 = split_pool_query(req, fn);
    CHECK(s1.selected == direct.selected);

    req.split = 2;
    std::vector<std::vector<std::size_t>> chunks;
    StrategyFn spy = [&](const QueryRequest& r) {
        chunks.push_back(r.unlabeled);
        CHECK(r.budget == 5);
        CHECK(r.split == 1);
        return fn(r);
    };
    auto s2 = split_pool_query(req, spy);
    REQUIRE(chunks.size() == 2);
    CHECK(s2.selected.size() == 10);
    CHECK(std::set<std::size_t>(s2.selected.begin(), s2.selected.end()).size() == 10);
    std::vector<std::size_t> both;
    std::set_intersection(chunks[0].begin(), chunks[0].end(), chunks[1].begin(), chunks[1].end(), std::back_inserter(both));
    CHECK(both.empty());
    CHECK(chunks[0].size() + chunks[1].size() == req.unlabeled.size());
    for (std::size_t i = 0; i < 10; ++i) {
        const auto& own = chunks[i / 5];
        CHECK(std::binary_search(own.begin(), own.end(), s2.selected[i]));
    }
    CHECK(s2.peak_embedding_rows <= req.unlabeled.size() / 2 + 1);

    req.split = 10;
    chunks.clear();
    StrategyFn one_each = [&](const QueryRequest& r) {
        chunks.push_back(r.unlabeled);
        return fn(r);
    };
    auto s10 = split_pool_query(req, one_each);
    CHECK(chunks.size() == 10);
    CHECK(s10.selected.size() == 10);

    req.split = 3;
    CHECK_THROWS_AS(split_pool_query(req, fn), ConfigError);
    req.split = 20;
    CHECK_THROWS_AS(split_pool_query(req, fn), ConfigError);
}

TEST_CASE("selection log writes one JSON object per record") {
    std::vector<SelectionRecord> recs(2);
    recs[0].index = 4;
    recs[0].score = 0.5;
    recs[0].contribution = {0.75, 0.25};
    recs[0].rho = 0.5;
    recs[1].index = 9;
    std::ostringstream out;
    write_selection_log(out, {"s1", Strategy::Bmmal, 2, 3}, recs);
    std::istringstream in(out.str());
    std::string line;
    std::vector<nlohmann::json> parsed;
    while (std::getline(in, line)) parsed.push_back(nlohmann::json::parse(line));
    REQUIRE(parsed.size() == 2);
    CHECK(parsed[0]["strategy"] == "bmmal");
    CHECK(parsed[0]["round"] == 3);
    CHECK(parsed[0]["repetition"] == 2);
    CHECK(parsed[0]["index"] == 4);
    CHECK(parsed[0]["phi_m1"] == 0.75);
    CHECK(parsed[0]["rho"] == 0.5);
    CHECK(parsed[1]["index"] == 9);
}
