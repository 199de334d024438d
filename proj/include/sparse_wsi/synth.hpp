#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sparse_wsi/engine.hpp"
#include "sparse_wsi/metrics.hpp"

namespace sparse_wsi {

/// Generative parameters for one synthetic slide. Component areas are in annotation pixels.
struct SynthSlideSpec {
    std::int64_t ref_width = 8000;
    std::int64_t ref_height = 6000;
    double tissue_coverage = 0.5;
    std::size_t n_positive_components = 0;
    std::int64_t component_area_min = 12;
    std::int64_t component_area_max = 40;
    /// 0 scatters components over the tissue, 1 packs them into one region.
    double clustering = 0.0;
    bool positive = false;
    /// Reference -> thumbnail (2x of a 40x reference) and reference -> annotation raster.
    double thumb_scale = 1.0 / 20.0;
    double ann_scale = 1.0 / 16.0;
};

void validate(const SynthSlideSpec& spec);

struct SynthSlide {
    GrayImage thumbnail{1, 1};
    BinaryMask annotation;
    std::int64_t ref_width = 0;
    std::int64_t ref_height = 0;
    double thumb_scale = 0.0;
    double ann_scale = 0.0;
};

/// Dark ellipse-union tissue on a white ground plus planted annotation components lying
/// strictly inside the tissue. Throws "spec infeasible" if components cannot be placed.
SynthSlide generate_slide(const SynthSlideSpec& spec, std::uint64_t seed);

struct SynthScorerSpec {
    double pos_score_mean = 0.8;
    double neg_score_mean = 0.2;
    double noise_scale = 0.2;
};

/// clamp(class mean + noise * u, 0, 1) with u in [-1,1] hashed from (slide id, patch index, seed).
class SynthScorer final : public PatchScorer {
public:
    SynthScorer(SynthScorerSpec spec, std::uint64_t seed);
    double score(const Patch& patch, const SlideGrid& grid) const override;

    const SynthScorerSpec& spec() const { return spec_; }

private:
    SynthScorerSpec spec_;
    std::uint64_t seed_;
};

std::shared_ptr<const PatchScorer> synth_scorer(const SynthScorerSpec& spec, std::uint64_t seed);

/// Fixed scores looked up by (slide id, patch index).
class TableScorer final : public PatchScorer {
public:
    TableScorer() = default;
    explicit TableScorer(std::map<std::string, std::vector<double>> table);

    void set(const std::string& slide_id, std::vector<double> scores);
    double score(const Patch& patch, const SlideGrid& grid) const override;

    /// CSV with header slide_id,patch_index,score.
    static TableScorer from_csv(const std::string& text);

private:
    std::map<std::string, std::vector<double>> table_;
};

/// Deterministic in-[-1,1] value for one patch.
double patch_noise(const std::string& slide_id, std::size_t patch_index, std::uint64_t seed);

std::string slide_id_for(std::size_t index);

struct SynthCohort {
    std::vector<SynthSlideSpec> specs;
    std::vector<std::string> slide_ids;
    std::vector<SynthSlide> slides;
    /// 0 when no annotation component exists anywhere in the cohort.
    std::int64_t label_threshold = 0;
    std::vector<Magnification> magnifications;
    /// grids[magnification index][slide index]
    std::vector<std::vector<SlideGrid>> grids;
    std::shared_ptr<const PatchScorer> scorer;

    std::vector<CohortSlide> view(std::size_t magnification_index) const;
};

struct CohortOptions {
    std::vector<Magnification> magnifications{Magnification::x10};
    TilingMode mode = TilingMode::inference_tiling;
    double tissue_sigma = 2.5;
    std::size_t threads = 1;
};

/// Slide i is generated from seed + i, tiled at every requested magnification and labeled
/// with the 10th-percentile component area pooled over the whole cohort.
SynthCohort generate_cohort(std::span<const SynthSlideSpec> specs, const SynthScorerSpec& scorer_spec,
                            std::uint64_t seed, const CohortOptions& options = {});

/// Varied slide geometry; positive slides get 40-160 components. Positives come first.
std::vector<SynthSlideSpec> default_cohort_specs(std::size_t n_positive, std::size_t n_negative,
                                                 std::uint64_t seed);

void to_json(nlohmann::json& j, const SynthSlideSpec& spec);
void from_json(const nlohmann::json& j, SynthSlideSpec& spec);
void to_json(nlohmann::json& j, const SynthScorerSpec& spec);
void from_json(const nlohmann::json& j, SynthScorerSpec& spec);

}  // namespace sparse_wsi
