#include "bmmal/eval.h"

#include "bmmal/error.h"
#include "bmmal/text.h"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>

namespace bmmal {

std::array<double, 2> mean_contribution(std::span<const AttributionResult> attributions) {
    if (attributions.empty()) throw ConfigError("mean contribution over an empty set");
    std::array<double, 2> sum{0.0, 0.0};
    for (const auto& a : attributions) {
        sum[0] += a.contribution[0];
        sum[1] += a.contribution[1];
    }
    const double n = static_cast<double>(attributions.size());
    return {sum[0] / n, sum[1] / n};
}

std::array<double, 2> mean_contribution(const ModelParams& model, const Dataset& ds, std::span<const std::size_t> indices) {
    if (indices.empty()) throw ConfigError("mean contribution over an empty set");
    auto attributions = attribute_all(model, ds, indices);
    return mean_contribution(attributions);
}

DominatedSubsetStats dominated_subset_stats(std::span<const AttributionResult> attributions) {
    DominatedSubsetStats stats;
    std::array<double, 2> weight_sum{0.0, 0.0};
    std::array<double, 2> rho_sum{0.0, 0.0};
    for (const auto& a : attributions) {
        const int d = a.dominant();
        auto& subset = stats.subsets[static_cast<std::size_t>(d)];
        ++subset.count;
        weight_sum[static_cast<std::size_t>(d)] += a.weights[static_cast<std::size_t>(1 - d)];
        rho_sum[static_cast<std::size_t>(d)] += a.rho;
    }
    for (std::size_t i = 0; i < 2; ++i) {
        auto& subset = stats.subsets[i];
        if (subset.count == 0) continue;
        subset.mean_weight = weight_sum[i] / static_cast<double>(subset.count);
        subset.mean_rho = rho_sum[i] / static_cast<double>(subset.count);
    }
    if (!attributions.empty()) stats.mean_contribution = mean_contribution(attributions);
    return stats;
}

namespace {

struct Moments {
    double mean = 0.0;
    double variance = 0.0;
};

Moments moments(std::span<const double> x) {
    Moments m;
    m.mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
    double ss = 0.0;
    for (double v : x) ss += (v - m.mean) * (v - m.mean);
    m.variance = ss / static_cast<double>(x.size() - 1);
    return m;
}

double mean_of(std::span<const double> x) { return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size()); }

} // namespace

TTestResult welch_ttest(std::span<const double> a, std::span<const double> b, double confidence) {
    if (a.size() < 2 || b.size() < 2) throw ConfigError("t-test needs at least two values per sample");
    if (!(confidence > 0.0 && confidence < 1.0)) throw ConfigError("confidence must lie in (0, 1)");
    const Moments ma = moments(a);
    const Moments mb = moments(b);
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    const double va = ma.variance / na;
    const double vb = mb.variance / nb;

    TTestResult r;
    const double se2 = va + vb;
    if (se2 == 0.0) {
        r.df = na + nb - 2.0;
        r.critical = boost::math::quantile(boost::math::students_t(r.df), 1.0 - (1.0 - confidence) / 2.0);
        if (ma.mean == mb.mean) return r;
        r.t = ma.mean > mb.mean ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
        r.significant = true;
        return r;
    }
    r.t = (ma.mean - mb.mean) / std::sqrt(se2);
    r.df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    r.critical = boost::math::quantile(boost::math::students_t(r.df), 1.0 - (1.0 - confidence) / 2.0);
    r.significant = std::abs(r.t) > r.critical;
    return r;
}

PairwiseMatrix pairwise_matrix(std::span<const SettingSeries> settings, double confidence) {
    PairwiseMatrix m;
    m.confidence = confidence;
    m.settings = settings.size();
    std::map<std::string, std::size_t> slot;
    for (const auto& setting : settings)
        for (const auto& s : setting.strategies)
            if (slot.emplace(s.strategy, m.strategies.size()).second) m.strategies.push_back(s.strategy);
    const std::size_t n = m.strategies.size();
    m.wins.assign(n, std::vector<double>(n, 0.0));

    for (const auto& setting : settings) {
        const auto& series = setting.strategies;
        std::size_t rounds = 0;
        for (const auto& s : series) {
            if (s.values.size() < 2)
                throw ConfigError("setting " + setting.setting + ": strategy " + s.strategy + " needs at least two repetitions");
            for (const auto& rep : s.values) {
                if (rounds == 0) rounds = rep.size();
                if (rep.size() != rounds || rounds == 0)
                    throw ConfigError("setting " + setting.setting + ": strategies disagree on the number of rounds");
            }
        }
        if (rounds == 0) continue;

        std::vector<std::vector<std::size_t>> counts(series.size(), std::vector<std::size_t>(series.size(), 0));
        for (std::size_t round = 0; round < rounds; ++round) {
            std::vector<std::vector<double>> samples(series.size());
            for (std::size_t i = 0; i < series.size(); ++i)
                for (const auto& rep : series[i].values) samples[i].push_back(rep[round]);
            for (std::size_t i = 0; i < series.size(); ++i) {
                for (std::size_t j = 0; j < series.size(); ++j) {
                    if (i == j) continue;
                    TTestResult t = welch_ttest(samples[i], samples[j], confidence);
                    if (t.significant && mean_of(samples[i]) > mean_of(samples[j])) ++counts[i][j];
                }
            }
        }
        for (std::size_t i = 0; i < series.size(); ++i)
            for (std::size_t j = 0; j < series.size(); ++j)
                m.wins[slot[series[i].strategy]][slot[series[j].strategy]] +=
                    static_cast<double>(counts[i][j]) / static_cast<double>(rounds);
    }

    m.column_average.assign(n, 0.0);
    if (n > 1) {
        for (std::size_t j = 0; j < n; ++j) {
            double sum = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                if (i != j) sum += m.wins[i][j];
            m.column_average[j] = sum / static_cast<double>(n - 1);
        }
    }
    return m;
}

void write_pairwise_matrix(std::ostream& out, const PairwiseMatrix& m) {
    out << "strategy";
    for (const auto& s : m.strategies) out << ',' << s;
    out << '\n';
    for (std::size_t i = 0; i < m.strategies.size(); ++i) {
        out << m.strategies[i];
        for (double v : m.wins[i]) out << ',' << format_double(v);
        out << '\n';
    }
    out << "average";
    for (double v : m.column_average) out << ',' << format_double(v);
    out << '\n';
}

ClasswiseComparison classwise_delta(const ModelParams& model_a, const ModelParams& model_b, const Dataset& ds,
                                    std::span<const std::size_t> indices) {
    if (indices.empty()) throw ConfigError("classwise comparison over an empty set");
    const auto k = static_cast<std::size_t>(ds.num_classes);
    std::vector<std::size_t> count(k, 0);
    std::vector<std::array<double, 3>> delta(k, {0.0, 0.0, 0.0});
    for (auto i : indices) {
        if (i >= ds.size()) throw ConfigError("classwise index out of range");
        const auto& s = ds.samples[i];
        ForwardResult ra = forward(model_a, s);
        ForwardResult rb = forward(model_b, s);
        auto& d = delta[static_cast<std::size_t>(s.label)];
        d[0] += double(ra.pseudo_label == s.label) - double(rb.pseudo_label == s.label);
        d[1] += double(argmax(ra.f_m1) == s.label) - double(argmax(rb.f_m1) == s.label);
        d[2] += double(argmax(ra.f_m2) == s.label) - double(argmax(rb.f_m2) == s.label);
        ++count[static_cast<std::size_t>(s.label)];
    }
    ClasswiseComparison out;
    for (std::size_t c = 0; c < k; ++c) {
        if (count[c] == 0) {
            out.absent_classes.push_back(static_cast<int>(c));
            continue;
        }
        const double n = static_cast<double>(count[c]);
        out.deltas.push_back({static_cast<int>(c), count[c], delta[c][0] / n, delta[c][1] / n, delta[c][2] / n});
    }
    std::stable_sort(out.deltas.begin(), out.deltas.end(),
                     [](const ClassDelta& a, const ClassDelta& b) { return a.mm > b.mm; });
    return out;
}

ClasswiseComparison classwise_delta(const ModelParams& model_a, const ModelParams& model_b, const Dataset& ds) {
    return classwise_delta(model_a, model_b, ds, ds.test_indices);
}

void write_metrics_csv(std::ostream& out, std::span<const MetricRow> rows) {
    out << kMetricsHeader << '\n';
    for (const auto& r : rows) {
        out << r.setting << ',' << r.strategy << ',' << r.repetition << ',' << r.round << ',' << r.labeled << ','
            << format_double(r.mm_top1) << ',' << format_double(r.m1_top1) << ',' << format_double(r.m2_top1) << ','
            << format_double(r.phi_m1) << ',' << format_double(r.phi_m2) << '\n';
    }
}

std::vector<MetricRow> read_metrics_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open metrics file " + path.string());
    std::vector<MetricRow> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line_no == 1) {
            if (line != kMetricsHeader) throw LoadError("unexpected metrics header", line_no);
            continue;
        }
        auto cols = split(line, ',');
        if (cols.size() != 10) throw LoadError("expected 10 columns", line_no);
        MetricRow r;
        r.setting = std::string(cols[0]);
        r.strategy = std::string(cols[1]);
        auto rep = parse_integer<int>(cols[2]);
        auto round = parse_integer<int>(cols[3]);
        auto labeled = parse_integer<std::size_t>(cols[4]);
        if (!rep || !round || !labeled || *rep < 0 || *round < 0) throw LoadError("bad integer field", line_no);
        r.repetition = *rep;
        r.round = *round;
        r.labeled = *labeled;
        double* targets[] = {&r.mm_top1, &r.m1_top1, &r.m2_top1, &r.phi_m1, &r.phi_m2};
        for (std::size_t c = 0; c < 5; ++c) {
            auto v = parse_double(cols[5 + c]);
            if (!v || !std::isfinite(*v)) throw LoadError("bad number '" + std::string(cols[5 + c]) + "'", line_no);
            *targets[c] = *v;
        }
        rows.push_back(std::move(r));
    }
    if (line_no == 0) throw LoadError("empty metrics file " + path.string());
    return rows;
}

Metric parse_metric(std::string_view name) {
    if (name == "mm") return Metric::Multimodal;
    if (name == "m1") return Metric::Modality1;
    if (name == "m2") return Metric::Modality2;
    throw ConfigError("unknown metric '" + std::string(name) + "' (expected mm, m1 or m2)");
}

std::string_view to_string(Metric metric) {
    switch (metric) {
        case Metric::Multimodal: return "mm";
        case Metric::Modality1: return "m1";
        case Metric::Modality2: return "m2";
    }
    return "unknown";
}

std::vector<SettingSeries> series_from_rows(std::span<const MetricRow> rows, Metric metric) {
    std::vector<SettingSeries> out;
    // (setting, strategy) -> repetition -> round -> value
    std::vector<std::vector<std::map<int, std::map<int, double>>>> cells;
    for (const auto& r : rows) {
        // Round 0 is the shared random seed pool, not a query round.
        if (r.round == 0) continue;
        auto sit = std::find_if(out.begin(), out.end(), [&](const SettingSeries& s) { return s.setting == r.setting; });
        if (sit == out.end()) {
            out.push_back({r.setting, {}});
            cells.emplace_back();
            sit = out.end() - 1;
        }
        const auto si = static_cast<std::size_t>(sit - out.begin());
        auto& strategies = sit->strategies;
        auto tit = std::find_if(strategies.begin(), strategies.end(),
                                [&](const StrategySeries& s) { return s.strategy == r.strategy; });
        if (tit == strategies.end()) {
            strategies.push_back({r.strategy, {}});
            cells[si].emplace_back();
            tit = strategies.end() - 1;
        }
        const auto ti = static_cast<std::size_t>(tit - strategies.begin());
        const double v = metric == Metric::Multimodal ? r.mm_top1 : metric == Metric::Modality1 ? r.m1_top1 : r.m2_top1;
        if (!cells[si][ti][r.repetition].emplace(r.round, v).second)
            throw ConfigError("duplicate metrics row for " + r.setting + "/" + r.strategy + " repetition " +
                              std::to_string(r.repetition) + " round " + std::to_string(r.round));
    }
    for (std::size_t si = 0; si < out.size(); ++si) {
        for (std::size_t ti = 0; ti < out[si].strategies.size(); ++ti) {
            for (const auto& [rep, by_round] : cells[si][ti]) {
                std::vector<double> series;
                int expected = 1;
                for (const auto& [round, value] : by_round) {
                    if (round != expected++)
                        throw ConfigError("metrics for " + out[si].setting + "/" + out[si].strategies[ti].strategy +
                                          " repetition " + std::to_string(rep) + " skip round " + std::to_string(expected - 1));
                    series.push_back(value);
                }
                out[si].strategies[ti].values.push_back(std::move(series));
            }
        }
    }
    return out;
}

} // namespace bmmal
