#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "sparse_wsi/engine.hpp"

namespace sparse_wsi {

/// Probability that no positive patch ever enters a top-T candidate list under a uniformly
/// random ordering: r!(r+k-T)! / ((r-T)!(r+k)!) for r >= T, else 0. Evaluated as
/// prod_{i<T} (r-i)/(r+k-i).
double failure_rate(std::int64_t r, std::int64_t k, std::int64_t T);

/// 0-based rank of the best-scoring positive under descending score. Tied negatives are
/// counted above it.
std::size_t top_positive_rank(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct SlideEvalStats {
    std::string slide_id;
    std::size_t r = 0;
    std::size_t k = 0;
    std::size_t N = 0;
    double failure_rate = 0.0;
    // Over successful trials only.
    std::optional<double> ttd_mean;
    std::optional<double> ttd_sd;
    std::size_t successful_trials = 0;
    std::size_t total_trials = 0;
};

/// Fraction of positive slides whose failure rate is nonzero.
double miss_rate(std::span<const SlideEvalStats> stats);

struct OracleMoments {
    double mean = 0.0;
    double variance = 0.0;
};

/// Failures drawn before the first success, sampling without replacement from N items of
/// which k are successes: mean (N-k)/(k+1), variance k(N-k)(N+1)/((k+1)^2 (k+2)).
OracleMoments nhg_moments(std::int64_t N, std::int64_t k);

/// Monte Carlo time-to-detection over `trials` random orderings drawn from `rng`.
SlideEvalStats ttd_monte_carlo(std::string slide_id, std::span<const double> scores,
                               std::span<const std::uint8_t> labels, std::size_t capacity, std::size_t trials,
                               Rng& rng);
SlideEvalStats ttd_monte_carlo(const SlideGrid& grid, const PatchScorer& scorer,
                               std::span<const std::uint8_t> labels, std::size_t capacity, std::size_t trials,
                               Rng& rng);

/// Non-interpolated AP: sum over ranks of (R_n - R_{n-1}) P_n, ranked by descending score
/// with ties in ascending index order.
double average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels);

/// Mann-Whitney AUC: (wins + ties/2) / (positives * negatives).
double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

enum class CurveMetric { ap, auc };

std::string to_string(CurveMetric m);
CurveMetric parse_curve_metric(const std::string& text);
double evaluate_metric(CurveMetric m, std::span<const double> scores, std::span<const std::uint8_t> labels);

struct CohortSlide {
    const SlideGrid* grid = nullptr;
    const PatchScorer* scorer = nullptr;
    bool positive = false;
};

struct CostPoint {
    std::size_t n = 0;
    double mean = 0.0;
    double sd = 0.0;
};

struct CostCurve {
    CurveMetric metric = CurveMetric::ap;
    std::size_t replicates = 0;
    std::vector<CostPoint> points;
};

struct CostCurveOptions {
    /// Strictly increasing sample counts; empty means 1..max patch count.
    std::vector<std::size_t> n_grid;
    std::size_t replicates = 500;
    std::size_t capacity = kDefaultCandidateCapacity;
    std::uint64_t seed = 0;
    std::size_t threads = 1;
};

/// Every integer from 1 to the largest grid in the cohort.
std::vector<std::size_t> full_n_grid(std::span<const CohortSlide> cohort);

/// Slide-level metric after n samples per slide, mean and population SD over replicates.
/// Replicate i draws its orderings from Rng::for_replicate(seed, i), slides in cohort order.
std::vector<CostCurve> cost_curves(std::span<const CohortSlide> cohort, std::span<const CurveMetric> metrics,
                                   const CostCurveOptions& options);
CostCurve cost_curve(std::span<const CohortSlide> cohort, CurveMetric metric, const CostCurveOptions& options);

/// Metric over slide scores from a full scan of every slide.
double dense_scan_metric(std::span<const CohortSlide> cohort, CurveMetric metric,
                         std::size_t capacity = kDefaultCandidateCapacity);

struct ThresholdRange {
    std::optional<std::size_t> n_min;
    /// Absent when the condition still holds at the last n.
    std::optional<std::size_t> n_max;
};

/// Smallest and largest n whose [mean - sd, mean + sd] contains `threshold`.
ThresholdRange threshold_range(const CostCurve& curve, double threshold);

/// Linear sequential cost model.
double estimate_wall_clock(double n_patches, double seconds_per_patch);

/// CSV: metric,n,mean,sd
void write_cost_curve_csv(std::ostream& out, const CostCurve& curve);
/// CSV: slide_id,N,k,r,failure_rate,ttd_mean,ttd_sd,successful_trials,total_trials
void write_slide_stats_csv(std::ostream& out, std::span<const SlideEvalStats> stats);

}  // namespace sparse_wsi
