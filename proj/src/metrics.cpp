#include "sparse_wsi/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sparse_wsi/io.hpp"
#include "sparse_wsi/parallel.hpp"

namespace sparse_wsi {

namespace {

void check_lengths(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    if (scores.size() != labels.size()) {
        throw Error("scores and labels differ in length");
    }
}

std::size_t count_positive(std::span<const std::uint8_t> labels) {
    return static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](auto l) { return l != 0; }));
}

// Mean and population SD computed on values shifted by the first one, so a set of identical
// values yields exactly that value and exactly zero spread.
CostPoint summarize(std::size_t n, std::span<const double> values) {
    const double origin = values.front();
    double shifted_sum = 0.0;
    for (double v : values) {
        shifted_sum += v - origin;
    }
    const double count = static_cast<double>(values.size());
    const double shifted_mean = shifted_sum / count;
    double ss = 0.0;
    for (double v : values) {
        const double d = (v - origin) - shifted_mean;
        ss += d * d;
    }
    return CostPoint{n, origin + shifted_mean, std::sqrt(ss / count)};
}

std::string optional_cell(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

}  // namespace

double failure_rate(std::int64_t r, std::int64_t k, std::int64_t T) {
    if (k <= 0) {
        throw Error("no positive patches");
    }
    if (r < 0 || T < 1) {
        throw Error("failure_rate: need r >= 0 and T >= 1");
    }
    if (r < T) {
        return 0.0;
    }
    double p = 1.0;
    for (std::int64_t i = 0; i < T; ++i) {
        p *= static_cast<double>(r - i) / static_cast<double>(r + k - i);
    }
    return p;
}

std::size_t top_positive_rank(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    check_lengths(scores, labels);
    std::optional<double> best;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 0 && (!best || scores[i] > *best)) {
            best = scores[i];
        }
    }
    if (!best) {
        throw Error("no positive patches");
    }
    std::size_t rank = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] == 0 && scores[i] >= *best) {
            ++rank;
        }
    }
    return rank;
}

double miss_rate(std::span<const SlideEvalStats> stats) {
    if (stats.empty()) {
        throw Error("miss_rate: no positive slides");
    }
    const auto missed = std::count_if(stats.begin(), stats.end(), [](const auto& s) { return s.failure_rate > 0.0; });
    return static_cast<double>(missed) / static_cast<double>(stats.size());
}

OracleMoments nhg_moments(std::int64_t N, std::int64_t k) {
    if (k < 1 || k > N) {
        throw Error("nhg_moments: need 1 <= k <= N");
    }
    const double n = static_cast<double>(N);
    const double kk = static_cast<double>(k);
    return OracleMoments{(n - kk) / (kk + 1.0), kk * (n - kk) * (n + 1.0) / ((kk + 1.0) * (kk + 1.0) * (kk + 2.0))};
}

SlideEvalStats ttd_monte_carlo(std::string slide_id, std::span<const double> scores,
                               std::span<const std::uint8_t> labels, std::size_t capacity, std::size_t trials,
                               Rng& rng) {
    check_lengths(scores, labels);
    if (trials < 1) {
        throw Error("ttd_monte_carlo: trials must be >= 1");
    }
    SlideEvalStats stats;
    stats.slide_id = std::move(slide_id);
    stats.N = scores.size();
    stats.k = count_positive(labels);
    if (stats.k == 0) {
        throw Error("no positive patches");
    }
    stats.r = top_positive_rank(scores, labels);
    stats.failure_rate = failure_rate(static_cast<std::int64_t>(stats.r), static_cast<std::int64_t>(stats.k),
                                      static_cast<std::int64_t>(capacity));
    stats.total_trials = trials;

    // Welford over successful trials.
    double mean = 0.0;
    double m2 = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
        PermutationStream order(scores.size(), rng);
        CandidateList list(capacity);
        std::size_t processed = 0;
        bool found = false;
        while (!order.done()) {
            const std::size_t idx = order.next();
            if (list.insert(idx, scores[idx]) && labels[idx] != 0) {
                found = true;
                break;
            }
            ++processed;
        }
        if (!found) {
            continue;
        }
        ++stats.successful_trials;
        const double x = static_cast<double>(processed);
        const double delta = x - mean;
        mean += delta / static_cast<double>(stats.successful_trials);
        m2 += delta * (x - mean);
    }
    if (stats.successful_trials > 0) {
        stats.ttd_mean = mean;
        stats.ttd_sd = std::sqrt(m2 / static_cast<double>(stats.successful_trials));
    }
    return stats;
}

SlideEvalStats ttd_monte_carlo(const SlideGrid& grid, const PatchScorer& scorer,
                               std::span<const std::uint8_t> labels, std::size_t capacity, std::size_t trials,
                               Rng& rng) {
    const auto scores = score_all(grid, scorer);
    return ttd_monte_carlo(grid.slide_id, scores, labels, capacity, trials, rng);
}

double average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    check_lengths(scores, labels);
    const std::size_t positives = count_positive(labels);
    if (positives == 0) {
        throw Error("average_precision: no positives");
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
    });
    double ap = 0.0;
    double prev_recall = 0.0;
    std::size_t hits = 0;
    for (std::size_t n = 1; n <= order.size(); ++n) {
        if (labels[order[n - 1]] == 0) {
            continue;  // recall unchanged, contributes exactly zero
        }
        ++hits;
        const double recall = static_cast<double>(hits) / static_cast<double>(positives);
        const double precision = static_cast<double>(hits) / static_cast<double>(n);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    return ap;
}

double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    check_lengths(scores, labels);
    const std::size_t positives = count_positive(labels);
    const std::size_t negatives = labels.size() - positives;
    if (positives == 0 || negatives == 0) {
        throw Error("roc_auc: need both classes");
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // Sum of 1-based midranks over positives.
    double positive_rank_sum = 0.0;
    for (std::size_t start = 0; start < order.size();) {
        std::size_t end = start + 1;
        while (end < order.size() && scores[order[end]] == scores[order[start]]) {
            ++end;
        }
        const double midrank = static_cast<double>(start + 1 + end) / 2.0;
        for (std::size_t i = start; i < end; ++i) {
            if (labels[order[i]] != 0) {
                positive_rank_sum += midrank;
            }
        }
        start = end;
    }
    const double p = static_cast<double>(positives);
    const double u = positive_rank_sum - p * (p + 1.0) / 2.0;
    return u / static_cast<double>(positives * negatives);
}

std::string to_string(CurveMetric m) { return m == CurveMetric::ap ? "AP" : "AUC"; }

CurveMetric parse_curve_metric(const std::string& text) {
    if (text == "AP" || text == "ap") return CurveMetric::ap;
    if (text == "AUC" || text == "auc") return CurveMetric::auc;
    throw Error("unknown metric: " + text);
}

double evaluate_metric(CurveMetric m, std::span<const double> scores, std::span<const std::uint8_t> labels) {
    return m == CurveMetric::ap ? average_precision(scores, labels) : roc_auc(scores, labels);
}

std::vector<std::size_t> full_n_grid(std::span<const CohortSlide> cohort) {
    std::size_t max_n = 0;
    for (const auto& s : cohort) {
        max_n = std::max(max_n, s.grid->patches.size());
    }
    std::vector<std::size_t> out(max_n);
    std::iota(out.begin(), out.end(), std::size_t{1});
    return out;
}

std::vector<CostCurve> cost_curves(std::span<const CohortSlide> cohort, std::span<const CurveMetric> metrics,
                                   const CostCurveOptions& options) {
    if (cohort.empty()) {
        throw Error("cost_curve: empty cohort");
    }
    if (options.replicates < 2) {
        throw Error("cost_curve: need at least 2 replicates");
    }
    const auto n_grid = options.n_grid.empty() ? full_n_grid(cohort) : options.n_grid;
    if (n_grid.empty()) {
        throw Error("cost_curve: cohort has no patches");
    }
    for (std::size_t i = 0; i < n_grid.size(); ++i) {
        if (n_grid[i] == 0 || (i > 0 && n_grid[i] <= n_grid[i - 1])) {
            throw Error("cost_curve: n grid must be positive and strictly increasing");
        }
    }

    std::vector<std::vector<double>> scores;
    std::vector<std::uint8_t> slide_labels;
    scores.reserve(cohort.size());
    for (const auto& s : cohort) {
        scores.push_back(score_all(*s.grid, *s.scorer));
        slide_labels.push_back(s.positive ? 1 : 0);
    }
    const auto positives = count_positive(slide_labels);
    if (positives == 0 || positives == slide_labels.size()) {
        throw Error("cost_curve: cohort must contain both classes");
    }

    const std::size_t reps = options.replicates;
    const std::size_t points = n_grid.size();
    // values[metric][point * reps + replicate]
    std::vector<std::vector<double>> values(metrics.size(), std::vector<double>(points * reps));

    parallel_for(reps, options.threads, [&](std::size_t rep) {
        Rng rng = Rng::for_replicate(options.seed, rep);
        std::vector<std::vector<double>> paths;
        paths.reserve(cohort.size());
        for (const auto& slide_scores : scores) {
            const auto perm = sample_permutation(slide_scores.size(), rng);
            paths.push_back(running_slide_scores(slide_scores, perm, options.capacity));
        }
        std::vector<double> slide_scores(cohort.size());
        for (std::size_t pi = 0; pi < points; ++pi) {
            for (std::size_t s = 0; s < cohort.size(); ++s) {
                const auto& path = paths[s];
                slide_scores[s] = path.empty() ? 0.0 : path[std::min(n_grid[pi], path.size()) - 1];
            }
            for (std::size_t m = 0; m < metrics.size(); ++m) {
                values[m][pi * reps + rep] = evaluate_metric(metrics[m], slide_scores, slide_labels);
            }
        }
    });

    std::vector<CostCurve> curves;
    for (std::size_t m = 0; m < metrics.size(); ++m) {
        CostCurve curve;
        curve.metric = metrics[m];
        curve.replicates = reps;
        for (std::size_t pi = 0; pi < points; ++pi) {
            curve.points.push_back(
                summarize(n_grid[pi], std::span<const double>(values[m]).subspan(pi * reps, reps)));
        }
        curves.push_back(std::move(curve));
    }
    return curves;
}

CostCurve cost_curve(std::span<const CohortSlide> cohort, CurveMetric metric, const CostCurveOptions& options) {
    const CurveMetric metrics[] = {metric};
    return std::move(cost_curves(cohort, metrics, options).front());
}

double dense_scan_metric(std::span<const CohortSlide> cohort, CurveMetric metric, std::size_t capacity) {
    std::vector<double> slide_scores;
    std::vector<std::uint8_t> slide_labels;
    for (const auto& s : cohort) {
        const auto scores = score_all(*s.grid, *s.scorer);
        std::vector<std::size_t> in_order(scores.size());
        std::iota(in_order.begin(), in_order.end(), std::size_t{0});
        const auto path = running_slide_scores(scores, in_order, capacity);
        slide_scores.push_back(path.empty() ? 0.0 : path.back());
        slide_labels.push_back(s.positive ? 1 : 0);
    }
    return evaluate_metric(metric, slide_scores, slide_labels);
}

ThresholdRange threshold_range(const CostCurve& curve, double threshold) {
    if (curve.points.empty()) {
        throw Error("threshold_range: empty curve");
    }
    ThresholdRange range;
    bool holds_at_end = false;
    for (const auto& p : curve.points) {
        const bool holds = p.mean - p.sd <= threshold && threshold <= p.mean + p.sd;
        if (holds) {
            if (!range.n_min) {
                range.n_min = p.n;
            }
            range.n_max = p.n;
        }
        holds_at_end = holds;
    }
    if (holds_at_end) {
        range.n_max.reset();
    }
    return range;
}

double estimate_wall_clock(double n_patches, double seconds_per_patch) {
    if (n_patches < 0.0 || seconds_per_patch < 0.0) {
        throw Error("estimate_wall_clock: arguments must be non-negative");
    }
    return n_patches * seconds_per_patch;
}

void write_cost_curve_csv(std::ostream& out, const CostCurve& curve) {
    out << "metric,n,mean,sd\n";
    for (const auto& p : curve.points) {
        out << to_string(curve.metric) << ',' << p.n << ',' << format_double(p.mean) << ',' << format_double(p.sd)
            << '\n';
    }
}

void write_slide_stats_csv(std::ostream& out, std::span<const SlideEvalStats> stats) {
    out << "slide_id,N,k,r,failure_rate,ttd_mean,ttd_sd,successful_trials,total_trials\n";
    for (const auto& s : stats) {
        out << s.slide_id << ',' << s.N << ',' << s.k << ',' << s.r << ',' << format_double(s.failure_rate) << ','
            << optional_cell(s.ttd_mean) << ',' << optional_cell(s.ttd_sd) << ',' << s.successful_trials << ','
            << s.total_trials << '\n';
    }
}

}  // namespace sparse_wsi
