#include "sparse_wsi/tiling.hpp"

#include <algorithm>
#include <cmath>

namespace sparse_wsi {

namespace {

// Absorbs representation error in products like 1000 * 0.05.
constexpr double kMapEpsilon = 1e-9;

}  // namespace

double level(Magnification m) {
    switch (m) {
        case Magnification::x2_5: return 2.5;
        case Magnification::x5: return 5.0;
        case Magnification::x10: return 10.0;
        case Magnification::x20: return 20.0;
        case Magnification::x40: return 40.0;
    }
    throw Error("invalid magnification");
}

Magnification magnification_from_level(double lvl) {
    for (auto m : kAllMagnifications) {
        if (level(m) == lvl) {
            return m;
        }
    }
    throw Error("unsupported magnification level: " + std::to_string(lvl));
}

std::string to_string(Magnification m) {
    switch (m) {
        case Magnification::x2_5: return "2.5x";
        case Magnification::x5: return "5x";
        case Magnification::x10: return "10x";
        case Magnification::x20: return "20x";
        case Magnification::x40: return "40x";
    }
    throw Error("invalid magnification");
}

Magnification parse_magnification(std::string_view text) {
    std::string s(text);
    if (!s.empty() && (s.back() == 'x' || s.back() == 'X')) {
        s.pop_back();
    }
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) {
            throw Error("");
        }
        return magnification_from_level(v);
    } catch (const std::exception&) {
        throw Error("unsupported magnification: " + std::string(text));
    }
}

std::string to_string(TilingMode mode) {
    return mode == TilingMode::training_overlap ? "training_overlap" : "inference_tiling";
}

TilingMode parse_tiling_mode(std::string_view text) {
    if (text == "training_overlap" || text == "training") return TilingMode::training_overlap;
    if (text == "inference_tiling" || text == "inference") return TilingMode::inference_tiling;
    throw Error("unknown tiling mode: " + std::string(text));
}

std::int64_t patch_span_ref(Magnification m) {
    return static_cast<std::int64_t>(std::llround(static_cast<double>(kPatchPixels) * 40.0 / level(m)));
}

std::int64_t stride_for(Magnification m, TilingMode mode) {
    if (mode == TilingMode::training_overlap) {
        // 224 * m / 40 pixels at magnification m, scaled back by 40 / m.
        return kPatchPixels;
    }
    return patch_span_ref(m);
}

std::vector<std::uint8_t> SlideGrid::labels() const {
    std::vector<std::uint8_t> out(patches.size());
    std::transform(patches.begin(), patches.end(), out.begin(),
                   [](const Patch& p) { return static_cast<std::uint8_t>(p.positive ? 1 : 0); });
    return out;
}

std::size_t SlideGrid::positive_count() const {
    return static_cast<std::size_t>(
        std::count_if(patches.begin(), patches.end(), [](const Patch& p) { return p.positive; }));
}

BinaryMask tissue_mask(const GrayImage& thumbnail, double sigma) {
    const GrayImage blurred = gaussian_blur(invert(thumbnail), sigma);
    return binarize(blurred, otsu_threshold(blurred));
}

Rect map_rect(const Rect& ref, double scale, std::int64_t width, std::int64_t height) {
    const Rect mapped{
        static_cast<std::int64_t>(std::floor(static_cast<double>(ref.x0) * scale + kMapEpsilon)),
        static_cast<std::int64_t>(std::floor(static_cast<double>(ref.y0) * scale + kMapEpsilon)),
        static_cast<std::int64_t>(std::ceil(static_cast<double>(ref.x1) * scale - kMapEpsilon)),
        static_cast<std::int64_t>(std::ceil(static_cast<double>(ref.y1) * scale - kMapEpsilon)),
    };
    return mapped.clipped(width, height);
}

SlideGrid tile_slide(std::string slide_id, std::int64_t ref_width, std::int64_t ref_height,
                     Magnification magnification, TilingMode mode, const IntegralImage& tissue_ii,
                     double thumb_scale, bool positive) {
    if (ref_width < 0 || ref_height < 0) {
        throw Error("tile_slide: negative slide dimensions");
    }
    if (!(thumb_scale > 0.0)) {
        throw Error("tile_slide: thumb_scale must be positive");
    }
    SlideGrid grid;
    grid.slide_id = std::move(slide_id);
    grid.ref_width = ref_width;
    grid.ref_height = ref_height;
    grid.magnification = magnification;
    grid.mode = mode;
    grid.patch_span_ref = patch_span_ref(magnification);
    grid.stride_ref = stride_for(magnification, mode);
    grid.positive = positive;

    const std::int64_t span = grid.patch_span_ref;
    const std::int64_t stride = grid.stride_ref;
    if (ref_width < span || ref_height < span) {
        grid.undersized = true;
        return grid;
    }
    const std::int64_t rows = (ref_height - span) / stride + 1;
    const std::int64_t cols = (ref_width - span) / stride + 1;
    for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t c = 0; c < cols; ++c) {
            const Rect rect{c * stride, r * stride, c * stride + span, r * stride + span};
            const Rect mapped = map_rect(rect, thumb_scale, tissue_ii.width(), tissue_ii.height());
            const auto area = static_cast<std::uint64_t>(mapped.area());
            if (area == 0) {
                continue;
            }
            const std::uint64_t tissue = query_region_sum(tissue_ii, mapped);
            // tissue / area >= 0.20, in integers.
            if (5 * tissue < area) {
                continue;
            }
            Patch p;
            p.index = grid.patches.size();
            p.grid_row = r;
            p.grid_col = c;
            p.rect_ref = rect;
            p.tissue_fraction = static_cast<double>(tissue) / static_cast<double>(area);
            grid.patches.push_back(p);
        }
    }
    return grid;
}

std::int64_t label_threshold(std::span<const std::int64_t> component_areas) {
    if (component_areas.empty()) {
        throw Error("empty annotation corpus");
    }
    std::vector<std::int64_t> sorted(component_areas.begin(), component_areas.end());
    std::sort(sorted.begin(), sorted.end());
    const std::size_t rank = std::max<std::size_t>(1, (sorted.size() + 9) / 10);
    return sorted[rank - 1];
}

std::int64_t label_threshold(std::span<const BinaryMask> annotation_masks) {
    std::vector<std::int64_t> areas;
    for (const auto& mask : annotation_masks) {
        for (const auto& c : connected_components(mask)) {
            areas.push_back(c.area);
        }
    }
    return label_threshold(std::span<const std::int64_t>(areas));
}

SlideGrid label_patches(SlideGrid grid, const IntegralImage& annotation_ii, double ann_scale,
                        std::int64_t threshold) {
    if (threshold < 1) {
        throw Error("label_patches: threshold must be positive");
    }
    grid.label_threshold = threshold;
    for (auto& p : grid.patches) {
        if (!grid.positive) {
            p.goblet_pixels = 0;
            p.positive = false;
            continue;
        }
        const Rect mapped = map_rect(p.rect_ref, ann_scale, annotation_ii.width(), annotation_ii.height());
        p.goblet_pixels = query_region_sum(annotation_ii, mapped);
        p.positive = p.goblet_pixels >= static_cast<std::uint64_t>(threshold);
    }
    return grid;
}

void to_json(nlohmann::json& j, const SlideGrid& grid) {
    nlohmann::json patches = nlohmann::json::array();
    for (const auto& p : grid.patches) {
        patches.push_back({
            {"index", p.index},
            {"grid_row", p.grid_row},
            {"grid_col", p.grid_col},
            {"rect", {p.rect_ref.x0, p.rect_ref.y0, p.rect_ref.x1, p.rect_ref.y1}},
            {"tissue_fraction", p.tissue_fraction},
            {"goblet_pixels", p.goblet_pixels},
            {"label", p.positive ? 1 : 0},
        });
    }
    j = nlohmann::json{
        {"slide_id", grid.slide_id},
        {"dims", {{"width", grid.ref_width}, {"height", grid.ref_height}}},
        {"magnification", to_string(grid.magnification)},
        {"mode", to_string(grid.mode)},
        {"patch_span_ref", grid.patch_span_ref},
        {"stride_ref", grid.stride_ref},
        {"threshold", grid.label_threshold},
        {"label", grid.positive ? "positive" : "negative"},
        {"undersized", grid.undersized},
        {"patches", std::move(patches)},
    };
}

void from_json(const nlohmann::json& j, SlideGrid& grid) {
    try {
        grid.slide_id = j.at("slide_id").get<std::string>();
        grid.ref_width = j.at("dims").at("width").get<std::int64_t>();
        grid.ref_height = j.at("dims").at("height").get<std::int64_t>();
        grid.magnification = parse_magnification(j.at("magnification").get<std::string>());
        grid.mode = parse_tiling_mode(j.at("mode").get<std::string>());
        grid.patch_span_ref = j.at("patch_span_ref").get<std::int64_t>();
        grid.stride_ref = j.at("stride_ref").get<std::int64_t>();
        grid.label_threshold = j.value("threshold", std::int64_t{0});
        const auto label = j.at("label").get<std::string>();
        if (label != "positive" && label != "negative") {
            throw Error("slide label must be positive or negative");
        }
        grid.positive = label == "positive";
        grid.undersized = j.value("undersized", false);
        grid.patches.clear();
        for (const auto& jp : j.at("patches")) {
            Patch p;
            p.index = jp.at("index").get<std::size_t>();
            p.grid_row = jp.at("grid_row").get<std::int64_t>();
            p.grid_col = jp.at("grid_col").get<std::int64_t>();
            const auto& r = jp.at("rect");
            p.rect_ref = Rect{r.at(0).get<std::int64_t>(), r.at(1).get<std::int64_t>(),
                              r.at(2).get<std::int64_t>(), r.at(3).get<std::int64_t>()};
            p.tissue_fraction = jp.at("tissue_fraction").get<double>();
            p.goblet_pixels = jp.at("goblet_pixels").get<std::uint64_t>();
            p.positive = jp.at("label").get<int>() != 0;
            if (p.index != grid.patches.size()) {
                throw Error("patch indices must be 0..n-1 in order");
            }
            grid.patches.push_back(p);
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("malformed grid JSON: ") + e.what());
    }
}

std::string grid_to_json_string(const SlideGrid& grid) {
    return nlohmann::json(grid).dump(1) + "\n";
}

SlideGrid grid_from_json_string(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("malformed grid JSON: ") + e.what());
    }
    return j.get<SlideGrid>();
}

}  // namespace sparse_wsi
