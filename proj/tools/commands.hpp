#pragma once

#include <filesystem>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "config.hpp"

namespace sparse_wsi::cli {

/// Grids for every configured magnification plus the scorer that reads them.
struct LoadedCohort {
    std::vector<std::string> slide_ids;
    std::vector<bool> positive;
    std::vector<Magnification> magnifications;
    /// grids[magnification index][slide index]
    std::vector<std::vector<SlideGrid>> grids;
    std::shared_ptr<const PatchScorer> scorer;

    std::vector<CohortSlide> view(std::size_t magnification_index) const;
};

/// Generates the synthetic cohort in memory or reads the grids listed in a manifest.
LoadedCohort load_cohort(const ExperimentConfig& config);

std::shared_ptr<const PatchScorer> make_scorer(const ExperimentConfig& config, const nlohmann::json* manifest_scorer);

struct TileArgs {
    std::filesystem::path thumbnail;
    std::filesystem::path annotation;
    std::int64_t width = 0;
    std::int64_t height = 0;
    std::string slide_id;
    std::string magnification;
    std::string mode;
    std::string label = "negative";
    std::int64_t threshold = 0;
    double thumb_scale = 0.0;
    double ann_scale = 0.0;
    std::filesystem::path output;
};

struct RunArgs {
    std::vector<std::string> slides;
    std::vector<std::filesystem::path> grid_files;
    std::size_t replicates = 1;
};

/// <out>/<name>
std::filesystem::path experiment_dir(const std::filesystem::path& out, const ExperimentConfig& config);

void cmd_synth(const ExperimentConfig& config, const std::filesystem::path& dir, std::ostream& log);
void cmd_tile(const ExperimentConfig& config, const TileArgs& args, const std::filesystem::path& dir,
              std::ostream& log);
void cmd_run(const ExperimentConfig& config, const RunArgs& args, const std::filesystem::path& dir, std::ostream& log);
void cmd_evaluate(const ExperimentConfig& config, const std::filesystem::path& dir, std::ostream& log);
void cmd_curves(const ExperimentConfig& config, const std::filesystem::path& dir, bool plot, std::ostream& log);

/// Parses arguments and dispatches. Returns the process exit status; errors are reported as a
/// single line on `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace sparse_wsi::cli
