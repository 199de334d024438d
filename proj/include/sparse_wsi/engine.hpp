#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "sparse_wsi/tiling.hpp"

namespace sparse_wsi {

inline constexpr std::size_t kDefaultCandidateCapacity = 3;

std::uint64_t splitmix64(std::uint64_t& state);

/// xoshiro256** seeded through splitmix64. Streams are identical on every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t seed() const { return seed_; }
    std::uint64_t next();
    /// Unbiased integer in [0, bound); bound > 0.
    std::uint64_t uniform_below(std::uint64_t bound);
    /// Double in [0, 1) with 53 random bits.
    double uniform01();

    /// Independent stream for replicate `index` of a run seeded with `master_seed`.
    static Rng for_replicate(std::uint64_t master_seed, std::uint64_t index) {
        return Rng(master_seed ^ index);
    }

private:
    std::uint64_t seed_;
    std::array<std::uint64_t, 4> s_{};
};

/// Forward Fisher-Yates: element i is fixed after i+1 draws, so any prefix can be generated lazily.
class PermutationStream {
public:
    PermutationStream(std::size_t n, Rng& rng);

    bool done() const { return pos_ == order_.size(); }
    std::size_t next();

private:
    Rng* rng_;
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
};

std::vector<std::size_t> sample_permutation(std::size_t n, Rng& rng);

/// Scores one patch. Implementations must be deterministic per (grid, patch).
class PatchScorer {
public:
    virtual ~PatchScorer() = default;
    virtual double score(const Patch& patch, const SlideGrid& grid) const = 0;
};

std::vector<double> score_all(const SlideGrid& grid, const PatchScorer& scorer);

struct Candidate {
    std::size_t patch_index = 0;
    double score = 0.0;

    friend bool operator==(const Candidate&, const Candidate&) = default;
};

/// Running top-T of the scores seen so far, sorted by descending score then ascending index.
/// A new score must strictly beat the current minimum to displace it, so on equal scores the
/// earlier sample is kept.
class CandidateList {
public:
    explicit CandidateList(std::size_t capacity = kDefaultCandidateCapacity);

    /// Returns whether the patch entered the list.
    bool insert(std::size_t patch_index, double score);

    std::size_t capacity() const { return capacity_; }
    std::span<const Candidate> entries() const { return entries_; }
    bool contains(std::size_t patch_index) const;

private:
    std::size_t capacity_;
    std::vector<Candidate> entries_;
    std::vector<std::uint64_t> arrival_;
    std::uint64_t arrivals_ = 0;
};

/// Mean of the entries; 0 for an empty list.
double slide_score(const CandidateList& list);

struct TraceStep {
    std::size_t step = 0;  // 1-based
    std::size_t patch_index = 0;
    double score = 0.0;
    bool entered = false;
    std::vector<Candidate> candidates;
    double slide_score = 0.0;

    friend bool operator==(const TraceStep&, const TraceStep&) = default;
};

struct InferenceTrace {
    std::string slide_id;
    std::vector<std::size_t> permutation;
    std::vector<TraceStep> steps;
    std::uint64_t rng_seed = 0;

    double final_slide_score() const { return steps.empty() ? 0.0 : steps.back().slide_score; }

    friend bool operator==(const InferenceTrace&, const InferenceTrace&) = default;
};

InferenceTrace run_sequential(const SlideGrid& grid, const PatchScorer& scorer,
                              std::span<const std::size_t> permutation,
                              std::size_t capacity = kDefaultCandidateCapacity, std::uint64_t rng_seed = 0);

/// Smallest 1-based step whose sampled patch is positive and entered the list.
/// Time to detection is that step minus one.
std::optional<std::size_t> detection_step(const InferenceTrace& trace, std::span<const std::uint8_t> labels);

/// Slide score after every step of `permutation`, over precomputed per-patch scores.
std::vector<double> running_slide_scores(std::span<const double> scores, std::span<const std::size_t> permutation,
                                         std::size_t capacity = kDefaultCandidateCapacity);

/// CSV: step,patch_index,score,entered,slide_score
void write_trace_csv(std::ostream& out, const InferenceTrace& trace);
std::string trace_to_csv(const InferenceTrace& trace);

}  // namespace sparse_wsi
