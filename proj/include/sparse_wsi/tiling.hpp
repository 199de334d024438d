#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sparse_wsi/imaging.hpp"

namespace sparse_wsi {

/// Reference resolution is 40x at 0.2524 um/pixel.
inline constexpr double kReferenceMicronsPerPixel = 0.2524;
inline constexpr std::int64_t kPatchPixels = 224;
inline constexpr double kMinTissueFraction = 0.20;

enum class Magnification { x2_5, x5, x10, x20, x40 };

inline constexpr Magnification kAllMagnifications[] = {Magnification::x2_5, Magnification::x5,
                                                       Magnification::x10, Magnification::x20,
                                                       Magnification::x40};

double level(Magnification m);
Magnification magnification_from_level(double level);
/// "2.5x", "10x", ...
std::string to_string(Magnification m);
Magnification parse_magnification(std::string_view text);

enum class TilingMode { training_overlap, inference_tiling };

std::string to_string(TilingMode mode);
TilingMode parse_tiling_mode(std::string_view text);

/// Side of a patch in reference pixels: round(224 * 40 / level).
std::int64_t patch_span_ref(Magnification m);

/// Grid step in reference pixels. Training mode uses 224 magnification-m pixels per step,
/// i.e. 224 reference pixels at every level; inference mode tiles without overlap.
std::int64_t stride_for(Magnification m, TilingMode mode);

struct Patch {
    std::size_t index = 0;
    std::int64_t grid_row = 0;
    std::int64_t grid_col = 0;
    Rect rect_ref;
    double tissue_fraction = 0.0;
    std::uint64_t goblet_pixels = 0;
    bool positive = false;

    friend bool operator==(const Patch&, const Patch&) = default;
};

struct SlideGrid {
    std::string slide_id;
    std::int64_t ref_width = 0;
    std::int64_t ref_height = 0;
    Magnification magnification = Magnification::x10;
    TilingMode mode = TilingMode::inference_tiling;
    std::int64_t patch_span_ref = 0;
    std::int64_t stride_ref = 0;
    /// Goblet-pixel threshold used for labeling; 0 when the grid was never labeled.
    std::int64_t label_threshold = 0;
    bool positive = false;
    /// Slide smaller than one patch span.
    bool undersized = false;
    std::vector<Patch> patches;

    std::vector<std::uint8_t> labels() const;
    std::size_t positive_count() const;

    friend bool operator==(const SlideGrid&, const SlideGrid&) = default;
};

/// blur(invert(thumbnail)) thresholded at its own Otsu level; 1 = tissue.
BinaryMask tissue_mask(const GrayImage& thumbnail, double sigma = 2.5);

/// Maps a reference-space rect into a raster at `scale`: floor for the origin, ceil for the
/// extent, clipped to [0,width) x [0,height).
Rect map_rect(const Rect& ref, double scale, std::int64_t width, std::int64_t height);

/// Enumerates the grid, drops patches that overhang the slide and keeps those whose mapped
/// tissue fraction is at least 20%. Patches carry raster-order indices.
SlideGrid tile_slide(std::string slide_id, std::int64_t ref_width, std::int64_t ref_height,
                     Magnification magnification, TilingMode mode, const IntegralImage& tissue_ii,
                     double thumb_scale, bool positive = false);

/// Nearest-rank 10th percentile of pooled component areas, i.e. the ceil(0.1 n)-th smallest.
std::int64_t label_threshold(std::span<const std::int64_t> component_areas);
std::int64_t label_threshold(std::span<const BinaryMask> annotation_masks);

/// Counts annotation pixels per patch and labels it positive iff the count reaches `threshold`.
/// Patches of negative slides are all labeled negative.
SlideGrid label_patches(SlideGrid grid, const IntegralImage& annotation_ii, double ann_scale,
                        std::int64_t threshold);

void to_json(nlohmann::json& j, const SlideGrid& grid);
void from_json(const nlohmann::json& j, SlideGrid& grid);

std::string grid_to_json_string(const SlideGrid& grid);
SlideGrid grid_from_json_string(const std::string& text);

}  // namespace sparse_wsi
