#include "sparse_wsi/engine.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "sparse_wsi/io.hpp"

namespace sparse_wsi {

namespace {

constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

bool ranks_before(const Candidate& a, const Candidate& b) {
    return a.score > b.score || (a.score == b.score && a.patch_index < b.patch_index);
}

void check_score(double s) {
    if (!(s >= 0.0 && s <= 1.0)) {
        throw Error("patch score outside [0,1]");
    }
}

}  // namespace

std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

Rng::Rng(std::uint64_t seed) : seed_(seed) {
    std::uint64_t sm = seed;
    for (auto& word : s_) {
        word = splitmix64(sm);
    }
}

std::uint64_t Rng::next() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

std::uint64_t Rng::uniform_below(std::uint64_t bound) {
    if (bound == 0) {
        throw Error("uniform_below: bound must be positive");
    }
    // Lemire's multiply-and-reject.
    using u128 = unsigned __int128;
    u128 m = static_cast<u128>(next()) * bound;
    auto low = static_cast<std::uint64_t>(m);
    if (low < bound) {
        const std::uint64_t floor = (0 - bound) % bound;
        while (low < floor) {
            m = static_cast<u128>(next()) * bound;
            low = static_cast<std::uint64_t>(m);
        }
    }
    return static_cast<std::uint64_t>(m >> 64);
}

double Rng::uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

PermutationStream::PermutationStream(std::size_t n, Rng& rng) : rng_(&rng), order_(n) {
    for (std::size_t i = 0; i < n; ++i) {
        order_[i] = i;
    }
}

std::size_t PermutationStream::next() {
    if (done()) {
        throw Error("PermutationStream exhausted");
    }
    const std::size_t remaining = order_.size() - pos_;
    const std::size_t j = pos_ + static_cast<std::size_t>(rng_->uniform_below(remaining));
    std::swap(order_[pos_], order_[j]);
    return order_[pos_++];
}

std::vector<std::size_t> sample_permutation(std::size_t n, Rng& rng) {
    PermutationStream stream(n, rng);
    std::vector<std::size_t> out;
    out.reserve(n);
    while (!stream.done()) {
        out.push_back(stream.next());
    }
    return out;
}

std::vector<double> score_all(const SlideGrid& grid, const PatchScorer& scorer) {
    std::vector<double> out;
    out.reserve(grid.patches.size());
    for (const auto& p : grid.patches) {
        const double s = scorer.score(p, grid);
        check_score(s);
        out.push_back(s);
    }
    return out;
}

CandidateList::CandidateList(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) {
        throw Error("candidate list capacity must be positive");
    }
    entries_.reserve(capacity + 1);
    arrival_.reserve(capacity + 1);
}

bool CandidateList::contains(std::size_t patch_index) const {
    return std::any_of(entries_.begin(), entries_.end(),
                       [patch_index](const Candidate& c) { return c.patch_index == patch_index; });
}

bool CandidateList::insert(std::size_t patch_index, double score) {
    if (contains(patch_index)) {
        throw Error("patch already on the candidate list");
    }
    if (entries_.size() == capacity_) {
        const double lowest = entries_.back().score;
        if (!(score > lowest)) {
            return false;
        }
        // Among tied lowest entries the most recent arrival goes, so earlier samples keep their place.
        std::size_t victim = entries_.size() - 1;
        for (std::size_t i = entries_.size(); i-- > 0 && entries_[i].score == lowest;) {
            if (arrival_[i] > arrival_[victim]) {
                victim = i;
            }
        }
        entries_.erase(entries_.begin() + static_cast<std::ptrdiff_t>(victim));
        arrival_.erase(arrival_.begin() + static_cast<std::ptrdiff_t>(victim));
    }
    const Candidate c{patch_index, score};
    const auto pos = std::upper_bound(entries_.begin(), entries_.end(), c, ranks_before) - entries_.begin();
    entries_.insert(entries_.begin() + pos, c);
    arrival_.insert(arrival_.begin() + pos, arrivals_++);
    return true;
}

double slide_score(const CandidateList& list) {
    const auto entries = list.entries();
    if (entries.empty()) {
        return 0.0;
    }
    double total = 0.0;
    for (const auto& c : entries) {
        total += c.score;
    }
    return total / static_cast<double>(entries.size());
}

InferenceTrace run_sequential(const SlideGrid& grid, const PatchScorer& scorer,
                              std::span<const std::size_t> permutation, std::size_t capacity,
                              std::uint64_t rng_seed) {
    if (permutation.size() != grid.patches.size()) {
        throw Error("permutation length does not match the grid");
    }
    std::vector<bool> seen(grid.patches.size(), false);
    for (auto idx : permutation) {
        if (idx >= seen.size() || seen[idx]) {
            throw Error("not a permutation of the grid's patch indices");
        }
        seen[idx] = true;
    }

    InferenceTrace trace;
    trace.slide_id = grid.slide_id;
    trace.permutation.assign(permutation.begin(), permutation.end());
    trace.rng_seed = rng_seed;
    trace.steps.reserve(permutation.size());

    CandidateList list(capacity);
    std::size_t step = 0;
    for (auto idx : permutation) {
        const double s = scorer.score(grid.patches[idx], grid);
        check_score(s);
        TraceStep rec;
        rec.step = ++step;
        rec.patch_index = idx;
        rec.score = s;
        rec.entered = list.insert(idx, s);
        rec.candidates.assign(list.entries().begin(), list.entries().end());
        rec.slide_score = slide_score(list);
        trace.steps.push_back(std::move(rec));
    }
    return trace;
}

std::optional<std::size_t> detection_step(const InferenceTrace& trace, std::span<const std::uint8_t> labels) {
    for (const auto& s : trace.steps) {
        if (s.patch_index >= labels.size()) {
            throw Error("labels do not cover the trace's patches");
        }
        if (s.entered && labels[s.patch_index] != 0) {
            return s.step;
        }
    }
    return std::nullopt;
}

std::vector<double> running_slide_scores(std::span<const double> scores, std::span<const std::size_t> permutation,
                                         std::size_t capacity) {
    CandidateList list(capacity);
    std::vector<double> out;
    out.reserve(permutation.size());
    for (auto idx : permutation) {
        list.insert(idx, scores[idx]);
        out.push_back(slide_score(list));
    }
    return out;
}

void write_trace_csv(std::ostream& out, const InferenceTrace& trace) {
    out << "step,patch_index,score,entered,slide_score\n";
    for (const auto& s : trace.steps) {
        out << s.step << ',' << s.patch_index << ',' << format_double(s.score) << ',' << (s.entered ? 1 : 0) << ','
            << format_double(s.slide_score) << '\n';
    }
}

std::string trace_to_csv(const InferenceTrace& trace) {
    std::ostringstream ss;
    write_trace_csv(ss, trace);
    return ss.str();
}

}  // namespace sparse_wsi
