#include "sparse_wsi/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <cstdio>
#include <limits>
#include <sstream>

#include "sparse_wsi/parallel.hpp"

namespace sparse_wsi {

namespace {

constexpr std::uint8_t kBackground = 255;
constexpr int kTissueIntensity = 60;
constexpr int kTissueTexture = 8;
// Components stay this many thumbnail pixels away from the tissue edge so blur + Otsu keeps them inside.
constexpr int kTissueMargin = 3;
constexpr int kPlacementAttempts = 500;

using Cell = std::pair<int, int>;

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * rng.uniform01(); }

std::int64_t uniform_int(Rng& rng, std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(rng.uniform_below(static_cast<std::uint64_t>(hi - lo + 1)));
}

int scaled_dim(std::int64_t ref, double scale) {
    return std::max(1, static_cast<int>(std::ceil(static_cast<double>(ref) * scale - 1e-9)));
}

struct Ellipse {
    double cx, cy, a, b, cos_t, sin_t;

    bool contains(int x, int y) const {
        const double dx = x + 0.5 - cx;
        const double dy = y + 0.5 - cy;
        const double u = (dx * cos_t + dy * sin_t) / a;
        const double v = (-dx * sin_t + dy * cos_t) / b;
        return u * u + v * v <= 1.0;
    }
};

// Tissue bitmap with a background frame at least one pixel wide.
std::vector<std::uint8_t> paint_tissue(int w, int h, double coverage, Rng& rng) {
    const auto total = static_cast<double>(w) * h;
    std::vector<std::uint8_t> tissue(static_cast<std::size_t>(w) * h, 0);
    if (w < 3 || h < 3) {
        throw Error("spec infeasible: thumbnail too small");
    }
    if (coverage >= 0.95) {
        for (int y = 1; y < h - 1; ++y) {
            std::fill_n(tissue.begin() + static_cast<std::ptrdiff_t>(y) * w + 1, w - 2, std::uint8_t{1});
        }
        return tissue;
    }
    const double target = coverage * total;
    const double tol = 0.02 * total;
    double count = 0.0;
    for (int iter = 0; iter < 4000 && count < target - tol; ++iter) {
        Ellipse e{uniform(rng, 0.1, 0.9) * w, uniform(rng, 0.1, 0.9) * h, uniform(rng, 0.08, 0.3) * w,
                  uniform(rng, 0.08, 0.3) * h, 0.0, 0.0};
        const double theta = uniform(rng, 0.0, std::numbers::pi);
        e.cos_t = std::cos(theta);
        e.sin_t = std::sin(theta);
        for (int shrink = 0; shrink < 12; ++shrink) {
            const double reach = std::max(e.a, e.b) + 1.0;
            const int x0 = std::max(1, static_cast<int>(e.cx - reach));
            const int x1 = std::min(w - 1, static_cast<int>(e.cx + reach) + 1);
            const int y0 = std::max(1, static_cast<int>(e.cy - reach));
            const int y1 = std::min(h - 1, static_cast<int>(e.cy + reach) + 1);
            std::vector<std::size_t> added;
            for (int y = y0; y < y1; ++y) {
                for (int x = x0; x < x1; ++x) {
                    const auto i = static_cast<std::size_t>(y) * w + x;
                    if (!tissue[i] && e.contains(x, y)) {
                        added.push_back(i);
                    }
                }
            }
            if (count + static_cast<double>(added.size()) <= target + tol) {
                for (auto i : added) {
                    tissue[i] = 1;
                }
                count += static_cast<double>(added.size());
                break;
            }
            e.a *= 0.7;
            e.b *= 0.7;
        }
    }
    if (count < target - tol) {
        throw Error("spec infeasible: could not reach tissue coverage");
    }
    return tissue;
}

// Random 4-connected accretion blob of exactly `area` cells around the origin.
std::vector<Cell> grow_blob(std::int64_t area, Rng& rng) {
    std::vector<Cell> cells{{0, 0}};
    std::set<Cell> taken{{0, 0}};
    std::vector<Cell> frontier;
    std::set<Cell> in_frontier;
    auto push_neighbors = [&](Cell c) {
        const Cell nbs[] = {{c.first + 1, c.second}, {c.first - 1, c.second}, {c.first, c.second + 1},
                            {c.first, c.second - 1}};
        for (const auto& nb : nbs) {
            if (!taken.count(nb) && in_frontier.insert(nb).second) {
                frontier.push_back(nb);
            }
        }
    };
    push_neighbors({0, 0});
    while (static_cast<std::int64_t>(cells.size()) < area) {
        const auto i = static_cast<std::size_t>(rng.uniform_below(frontier.size()));
        const Cell c = frontier[i];
        frontier[i] = frontier.back();
        frontier.pop_back();
        in_frontier.erase(c);
        cells.push_back(c);
        taken.insert(c);
        push_neighbors(c);
    }
    return cells;
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace

void validate(const SynthSlideSpec& spec) {
    if (spec.ref_width < 1 || spec.ref_height < 1) {
        throw Error("synth spec: slide dimensions must be positive");
    }
    if (!(spec.tissue_coverage > 0.0 && spec.tissue_coverage <= 1.0)) {
        throw Error("synth spec: tissue_coverage must lie in (0,1]");
    }
    if (!(spec.clustering >= 0.0 && spec.clustering <= 1.0)) {
        throw Error("synth spec: clustering must lie in [0,1]");
    }
    if (!spec.positive && spec.n_positive_components != 0) {
        throw Error("synth spec: negative slides cannot carry components");
    }
    if (spec.n_positive_components > 0 &&
        (spec.component_area_min < 1 || spec.component_area_max < spec.component_area_min)) {
        throw Error("synth spec: invalid component area range");
    }
    if (!(spec.thumb_scale > 0.0) || !(spec.ann_scale > 0.0)) {
        throw Error("synth spec: scales must be positive");
    }
}

SynthSlide generate_slide(const SynthSlideSpec& spec, std::uint64_t seed) {
    validate(spec);
    Rng rng(seed);
    const int tw = scaled_dim(spec.ref_width, spec.thumb_scale);
    const int th = scaled_dim(spec.ref_height, spec.thumb_scale);
    const int aw = scaled_dim(spec.ref_width, spec.ann_scale);
    const int ah = scaled_dim(spec.ref_height, spec.ann_scale);

    const auto tissue = paint_tissue(tw, th, spec.tissue_coverage, rng);

    SynthSlide slide;
    slide.ref_width = spec.ref_width;
    slide.ref_height = spec.ref_height;
    slide.thumb_scale = spec.thumb_scale;
    slide.ann_scale = spec.ann_scale;
    std::vector<std::uint8_t> px(tissue.size(), kBackground);
    for (std::size_t i = 0; i < tissue.size(); ++i) {
        if (tissue[i]) {
            px[i] = static_cast<std::uint8_t>(kTissueIntensity +
                                              uniform_int(rng, -kTissueTexture, kTissueTexture));
        }
    }
    slide.thumbnail = GrayImage(tw, th, std::move(px));
    slide.annotation = BinaryMask(aw, ah);
    if (spec.n_positive_components == 0) {
        return slide;
    }

    // Thumbnail pixels whose whole (2m+1)^2 neighbourhood is tissue.
    const auto tissue_ii = build_integral(BinaryMask(tw, th, tissue));
    const auto window = static_cast<std::uint64_t>((2 * kTissueMargin + 1) * (2 * kTissueMargin + 1));
    const double ann_to_thumb = spec.thumb_scale / spec.ann_scale;
    auto deep_tissue = [&](int ax, int ay) {
        const int tx = static_cast<int>(std::floor((ax + 0.5) * ann_to_thumb));
        const int ty = static_cast<int>(std::floor((ay + 0.5) * ann_to_thumb));
        const Rect r{tx - kTissueMargin, ty - kTissueMargin, tx + kTissueMargin + 1, ty + kTissueMargin + 1};
        return r.x0 >= 0 && r.y0 >= 0 && r.x1 <= tw && r.y1 <= th && query_region_sum(tissue_ii, r) == window;
    };

    std::vector<std::uint8_t> blocked(static_cast<std::size_t>(aw) * ah, 0);
    auto fits = [&](const std::vector<Cell>& cells, int ax, int ay) {
        for (const auto& [dx, dy] : cells) {
            const int x = ax + dx;
            const int y = ay + dy;
            if (x < 0 || y < 0 || x >= aw || y >= ah || blocked[static_cast<std::size_t>(y) * aw + x] ||
                !deep_tissue(x, y)) {
                return false;
            }
        }
        return true;
    };

    Cell cluster_center{-1, -1};
    for (int attempt = 0; attempt < 100000; ++attempt) {
        const int x = static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(aw)));
        const int y = static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(ah)));
        if (deep_tissue(x, y)) {
            cluster_center = {x, y};
            break;
        }
    }
    if (cluster_center.first < 0) {
        throw Error("spec infeasible: no interior tissue for components");
    }
    const double cluster_radius = std::sqrt(static_cast<double>(spec.n_positive_components) *
                                            static_cast<double>(spec.component_area_max) * 3.0 / std::numbers::pi) +
                                  2.0;

    for (std::size_t c = 0; c < spec.n_positive_components; ++c) {
        const auto area = uniform_int(rng, spec.component_area_min, spec.component_area_max);
        const auto cells = grow_blob(area, rng);
        const bool clustered = rng.uniform01() < spec.clustering;
        bool placed = false;
        for (int attempt = 0; attempt < kPlacementAttempts && !placed; ++attempt) {
            int ax = 0;
            int ay = 0;
            if (clustered) {
                const double radius = cluster_radius * (1.0 + attempt / 20.0);
                const double rr = radius * std::sqrt(rng.uniform01());
                const double phi = 2.0 * std::numbers::pi * rng.uniform01();
                ax = cluster_center.first + static_cast<int>(std::lround(rr * std::cos(phi)));
                ay = cluster_center.second + static_cast<int>(std::lround(rr * std::sin(phi)));
            } else {
                ax = static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(aw)));
                ay = static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(ah)));
            }
            if (!fits(cells, ax, ay)) {
                continue;
            }
            for (const auto& [dx, dy] : cells) {
                const int x = ax + dx;
                const int y = ay + dy;
                slide.annotation.set(x, y, true);
                for (int ny = std::max(0, y - 1); ny <= std::min(ah - 1, y + 1); ++ny) {
                    for (int nx = std::max(0, x - 1); nx <= std::min(aw - 1, x + 1); ++nx) {
                        blocked[static_cast<std::size_t>(ny) * aw + nx] = 1;
                    }
                }
            }
            placed = true;
        }
        if (!placed) {
            throw Error("spec infeasible: could not place annotation component");
        }
    }
    return slide;
}

double patch_noise(const std::string& slide_id, std::size_t patch_index, std::uint64_t seed) {
    std::uint64_t state = seed ^ fnv1a(slide_id);
    state = splitmix64(state) ^ static_cast<std::uint64_t>(patch_index);
    const std::uint64_t h = splitmix64(state);
    return static_cast<double>(h >> 11) * 0x1.0p-52 - 1.0;
}

SynthScorer::SynthScorer(SynthScorerSpec spec, std::uint64_t seed) : spec_(spec), seed_(seed) {
    if (!(spec_.noise_scale >= 0.0)) {
        throw Error("synth scorer: noise_scale must be non-negative");
    }
}

double SynthScorer::score(const Patch& patch, const SlideGrid& grid) const {
    const double mean = patch.positive ? spec_.pos_score_mean : spec_.neg_score_mean;
    if (spec_.noise_scale == 0.0) {
        return std::clamp(mean, 0.0, 1.0);
    }
    return std::clamp(mean + spec_.noise_scale * patch_noise(grid.slide_id, patch.index, seed_), 0.0, 1.0);
}

std::shared_ptr<const PatchScorer> synth_scorer(const SynthScorerSpec& spec, std::uint64_t seed) {
    return std::make_shared<SynthScorer>(spec, seed);
}

TableScorer::TableScorer(std::map<std::string, std::vector<double>> table) : table_(std::move(table)) {}

void TableScorer::set(const std::string& slide_id, std::vector<double> scores) {
    table_[slide_id] = std::move(scores);
}

double TableScorer::score(const Patch& patch, const SlideGrid& grid) const {
    const auto it = table_.find(grid.slide_id);
    if (it == table_.end() || patch.index >= it->second.size()) {
        throw Error("no score for " + grid.slide_id + " patch " + std::to_string(patch.index));
    }
    return it->second[patch.index];
}

TableScorer TableScorer::from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) {
        throw Error("score table: empty file");
    }
    TableScorer out;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        std::istringstream row(line);
        std::string id, idx, score;
        if (!std::getline(row, id, ',') || !std::getline(row, idx, ',') || !std::getline(row, score, ',')) {
            throw Error("score table: malformed line " + std::to_string(line_no));
        }
        try {
            const auto index = static_cast<std::size_t>(std::stoull(idx));
            auto& scores = out.table_[id];
            if (scores.size() <= index) {
                scores.resize(index + 1, std::numeric_limits<double>::quiet_NaN());
            }
            scores[index] = std::stod(score);
        } catch (const std::logic_error&) {
            throw Error("score table: malformed line " + std::to_string(line_no));
        }
    }
    return out;
}

std::string slide_id_for(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "slide_%03zu", index);
    return buf;
}

std::vector<CohortSlide> SynthCohort::view(std::size_t magnification_index) const {
    std::vector<CohortSlide> out;
    const auto& row = grids.at(magnification_index);
    for (std::size_t i = 0; i < row.size(); ++i) {
        out.push_back(CohortSlide{&row[i], scorer.get(), specs[i].positive});
    }
    return out;
}

SynthCohort generate_cohort(std::span<const SynthSlideSpec> specs, const SynthScorerSpec& scorer_spec,
                            std::uint64_t seed, const CohortOptions& options) {
    if (specs.empty()) {
        throw Error("empty cohort spec");
    }
    SynthCohort cohort;
    cohort.specs.assign(specs.begin(), specs.end());
    cohort.magnifications = options.magnifications;
    cohort.scorer = synth_scorer(scorer_spec, seed);
    for (std::size_t i = 0; i < specs.size(); ++i) {
        cohort.slide_ids.push_back(slide_id_for(i));
    }
    cohort.slides.resize(specs.size());
    parallel_for(specs.size(), options.threads,
                 [&](std::size_t i) { cohort.slides[i] = generate_slide(specs[i], seed + i); });

    std::vector<std::int64_t> areas;
    for (const auto& slide : cohort.slides) {
        for (const auto& c : connected_components(slide.annotation)) {
            areas.push_back(c.area);
        }
    }
    cohort.label_threshold = areas.empty() ? 0 : label_threshold(std::span<const std::int64_t>(areas));

    cohort.grids.assign(options.magnifications.size(), std::vector<SlideGrid>(specs.size()));
    parallel_for(specs.size(), options.threads, [&](std::size_t i) {
        const auto& slide = cohort.slides[i];
        const auto tissue_ii = build_integral(tissue_mask(slide.thumbnail, options.tissue_sigma));
        const auto ann_ii = build_integral(slide.annotation);
        for (std::size_t m = 0; m < options.magnifications.size(); ++m) {
            auto grid = tile_slide(cohort.slide_ids[i], slide.ref_width, slide.ref_height,
                                   options.magnifications[m], options.mode, tissue_ii, slide.thumb_scale,
                                   specs[i].positive);
            if (cohort.label_threshold > 0) {
                grid = label_patches(std::move(grid), ann_ii, slide.ann_scale, cohort.label_threshold);
            }
            cohort.grids[m][i] = std::move(grid);
        }
    });
    return cohort;
}

std::vector<SynthSlideSpec> default_cohort_specs(std::size_t n_positive, std::size_t n_negative,
                                                 std::uint64_t seed) {
    Rng rng(seed ^ 0x636f686f7274ULL);
    std::vector<SynthSlideSpec> out;
    for (std::size_t i = 0; i < n_positive + n_negative; ++i) {
        SynthSlideSpec s;
        s.positive = i < n_positive;
        s.ref_width = uniform_int(rng, 12000, 28000);
        s.ref_height = uniform_int(rng, 10000, 20000);
        s.tissue_coverage = uniform(rng, 0.3, 0.7);
        s.n_positive_components = s.positive ? static_cast<std::size_t>(uniform_int(rng, 20, 160)) : 0;
        s.component_area_min = 12;
        s.component_area_max = 40;
        s.clustering = uniform(rng, 0.5, 1.0);
        out.push_back(s);
    }
    return out;
}

void to_json(nlohmann::json& j, const SynthSlideSpec& s) {
    j = nlohmann::json{
        {"ref_width", s.ref_width},
        {"ref_height", s.ref_height},
        {"tissue_coverage", s.tissue_coverage},
        {"n_positive_components", s.n_positive_components},
        {"component_area_range", {s.component_area_min, s.component_area_max}},
        {"clustering", s.clustering},
        {"label", s.positive ? "positive" : "negative"},
        {"thumb_scale", s.thumb_scale},
        {"ann_scale", s.ann_scale},
    };
}

void from_json(const nlohmann::json& j, SynthSlideSpec& s) {
    const SynthSlideSpec defaults;
    s.ref_width = j.value("ref_width", defaults.ref_width);
    s.ref_height = j.value("ref_height", defaults.ref_height);
    s.tissue_coverage = j.value("tissue_coverage", defaults.tissue_coverage);
    s.n_positive_components = j.value("n_positive_components", defaults.n_positive_components);
    if (j.contains("component_area_range")) {
        s.component_area_min = j.at("component_area_range").at(0).get<std::int64_t>();
        s.component_area_max = j.at("component_area_range").at(1).get<std::int64_t>();
    }
    s.clustering = j.value("clustering", defaults.clustering);
    s.positive = j.value("label", std::string("negative")) == "positive";
    s.thumb_scale = j.value("thumb_scale", defaults.thumb_scale);
    s.ann_scale = j.value("ann_scale", defaults.ann_scale);
}

void to_json(nlohmann::json& j, const SynthScorerSpec& s) {
    j = nlohmann::json{
        {"pos_score_mean", s.pos_score_mean},
        {"neg_score_mean", s.neg_score_mean},
        {"noise_scale", s.noise_scale},
    };
}

void from_json(const nlohmann::json& j, SynthScorerSpec& s) {
    const SynthScorerSpec defaults;
    s.pos_score_mean = j.value("pos_score_mean", defaults.pos_score_mean);
    s.neg_score_mean = j.value("neg_score_mean", defaults.neg_score_mean);
    s.noise_scale = j.value("noise_scale", defaults.noise_scale);
}

}  // namespace sparse_wsi
