#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sparse_wsi/synth.hpp"

namespace sparse_wsi::cli {

/// Which sample counts a cost curve is evaluated at.
struct NGridPolicy {
    enum class Kind { all, step, list };
    Kind kind = Kind::all;
    std::size_t step = 1;
    std::vector<std::size_t> values;

    /// Concrete grid for a cohort whose largest slide has `max_patches` patches. The step policy
    /// always ends at `max_patches`.
    std::vector<std::size_t> resolve(std::size_t max_patches) const;
};

struct CohortSource {
    enum class Kind { counts, slides, manifest };
    Kind kind = Kind::counts;
    std::size_t positive = 20;
    std::size_t negative = 86;
    std::vector<SynthSlideSpec> slides;
    std::filesystem::path manifest;
};

struct ScorerSource {
    SynthScorerSpec spec;
    /// Defaults to the experiment seed.
    std::optional<std::uint64_t> seed;
    /// CSV slide_id,patch_index,score; replaces the synthetic scorer when set.
    std::filesystem::path score_table;
    bool explicit_spec = false;
};

struct ExperimentConfig {
    std::string name = "default";
    std::uint64_t seed = 0;
    std::vector<Magnification> magnifications{Magnification::x10};
    TilingMode mode = TilingMode::inference_tiling;
    std::size_t candidate_list_T = kDefaultCandidateCapacity;
    std::size_t trials_ttd = 10000;
    std::size_t replicates_curves = 500;
    NGridPolicy n_grid;
    CohortSource cohort;
    ScorerSource scorer;
    /// Named per-patch cost profiles in output order.
    std::vector<std::pair<std::string, double>> seconds_per_patch{{"cpu", 3.0}, {"wasm", 0.28}, {"webgl", 0.05}};
    /// Table II thresholds per metric.
    std::map<CurveMetric, double> thresholds{{CurveMetric::ap, 0.95}, {CurveMetric::auc, 0.98}};
    double tissue_sigma = 2.5;
    bool write_images = true;
    std::size_t threads = 1;
    /// Directory the config file lives in; relative paths inside it resolve against this.
    std::filesystem::path base_dir = ".";
};

/// Parses and validates a config document. Missing fields keep their defaults.
ExperimentConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir = ".");
ExperimentConfig load_config(const std::filesystem::path& path);

void validate(const ExperimentConfig& config);

}  // namespace sparse_wsi::cli
