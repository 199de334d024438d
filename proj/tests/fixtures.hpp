#pragma once

#include <string>
#include <vector>

#include "sparse_wsi/engine.hpp"

namespace fixture {

/// A row of 40x patches with the given labels; the slide is positive iff any label is set.
inline sparse_wsi::SlideGrid make_grid(const std::string& id, const std::vector<std::uint8_t>& labels) {
    sparse_wsi::SlideGrid g;
    g.slide_id = id;
    g.magnification = sparse_wsi::Magnification::x40;
    g.patch_span_ref = 224;
    g.stride_ref = 224;
    g.ref_width = 224 * static_cast<std::int64_t>(std::max<std::size_t>(labels.size(), 1));
    g.ref_height = 224;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        sparse_wsi::Patch p;
        p.index = i;
        p.grid_col = static_cast<std::int64_t>(i);
        p.rect_ref = {static_cast<std::int64_t>(224 * i), 0, static_cast<std::int64_t>(224 * (i + 1)), 224};
        p.tissue_fraction = 1.0;
        p.positive = labels[i] != 0;
        g.positive = g.positive || p.positive;
        g.patches.push_back(p);
    }
    return g;
}

/// Scores looked up by patch index.
class VectorScorer final : public sparse_wsi::PatchScorer {
public:
    explicit VectorScorer(std::vector<double> scores) : scores_(std::move(scores)) {}
    double score(const sparse_wsi::Patch& patch, const sparse_wsi::SlideGrid&) const override {
        return scores_.at(patch.index);
    }

private:
    std::vector<double> scores_;
};

}  // namespace fixture
