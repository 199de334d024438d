#include "config.hpp"

#include <numeric>

#include "sparse_wsi/io.hpp"

namespace sparse_wsi::cli {

namespace {

using nlohmann::json;

std::filesystem::path resolve_path(const std::filesystem::path& base, const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
}

template <typename T>
T positive_count(const json& j, const char* key, T fallback) {
    if (!j.contains(key)) {
        return fallback;
    }
    const auto v = j.at(key).get<std::int64_t>();
    if (v <= 0) {
        throw Error(std::string("config: ") + key + " must be positive");
    }
    return static_cast<T>(v);
}

NGridPolicy parse_n_grid(const json& j) {
    NGridPolicy p;
    if (j.is_string()) {
        if (j.get<std::string>() != "all") {
            throw Error("config: n_grid must be \"all\", {\"step\": s} or a list");
        }
    } else if (j.is_object()) {
        p.kind = NGridPolicy::Kind::step;
        p.step = positive_count<std::size_t>(j, "step", 1);
    } else if (j.is_array()) {
        p.kind = NGridPolicy::Kind::list;
        for (const auto& v : j) {
            const auto n = v.get<std::int64_t>();
            if (n <= 0 || (!p.values.empty() && static_cast<std::size_t>(n) <= p.values.back())) {
                throw Error("config: n_grid list must be positive and strictly increasing");
            }
            p.values.push_back(static_cast<std::size_t>(n));
        }
        if (p.values.empty()) {
            throw Error("config: n_grid list is empty");
        }
    } else {
        throw Error("config: n_grid must be \"all\", {\"step\": s} or a list");
    }
    return p;
}

CohortSource parse_cohort(const json& j, const std::filesystem::path& base) {
    CohortSource c;
    if (j.contains("manifest")) {
        c.kind = CohortSource::Kind::manifest;
        c.manifest = resolve_path(base, j.at("manifest").get<std::string>());
    } else if (j.contains("slides")) {
        c.kind = CohortSource::Kind::slides;
        c.slides = j.at("slides").get<std::vector<SynthSlideSpec>>();
        if (c.slides.empty()) {
            throw Error("empty cohort spec");
        }
    } else {
        c.positive = j.value("positive", c.positive);
        c.negative = j.value("negative", c.negative);
        if (c.positive + c.negative == 0) {
            throw Error("empty cohort spec");
        }
    }
    return c;
}

ScorerSource parse_scorer(const json& j, const std::filesystem::path& base) {
    ScorerSource s;
    if (j.contains("score_table")) {
        s.score_table = resolve_path(base, j.at("score_table").get<std::string>());
    }
    s.spec = j.get<SynthScorerSpec>();
    s.explicit_spec = j.contains("pos_score_mean") || j.contains("neg_score_mean") || j.contains("noise_scale");
    if (j.contains("seed")) {
        s.seed = j.at("seed").get<std::uint64_t>();
    }
    return s;
}

}  // namespace

std::vector<std::size_t> NGridPolicy::resolve(std::size_t max_patches) const {
    std::vector<std::size_t> out;
    switch (kind) {
        case Kind::all:
            out.resize(max_patches);
            std::iota(out.begin(), out.end(), std::size_t{1});
            break;
        case Kind::step:
            for (std::size_t n = 1; n < max_patches; n += step) {
                out.push_back(n);
            }
            if (max_patches > 0) {
                out.push_back(max_patches);
            }
            break;
        case Kind::list:
            out = values;
            break;
    }
    return out;
}

ExperimentConfig parse_config(const json& j, const std::filesystem::path& base_dir) {
    if (!j.is_object()) {
        throw Error("config: expected a JSON object");
    }
    ExperimentConfig c;
    c.base_dir = base_dir;
    try {
        c.name = j.value("name", c.name);
        c.seed = j.value("seed", c.seed);
        if (j.contains("magnifications")) {
            c.magnifications.clear();
            for (const auto& m : j.at("magnifications")) {
                c.magnifications.push_back(m.is_number() ? magnification_from_level(m.get<double>())
                                                         : parse_magnification(m.get<std::string>()));
            }
        }
        if (j.contains("tiling_mode")) {
            c.mode = parse_tiling_mode(j.at("tiling_mode").get<std::string>());
        }
        c.candidate_list_T = positive_count(j, "candidate_list_T", c.candidate_list_T);
        c.trials_ttd = positive_count(j, "trials_ttd", c.trials_ttd);
        c.replicates_curves = positive_count(j, "replicates_curves", c.replicates_curves);
        if (j.contains("n_grid")) {
            c.n_grid = parse_n_grid(j.at("n_grid"));
        }
        if (j.contains("cohort")) {
            c.cohort = parse_cohort(j.at("cohort"), base_dir);
        }
        if (j.contains("scorer")) {
            c.scorer = parse_scorer(j.at("scorer"), base_dir);
        }
        if (j.contains("seconds_per_patch")) {
            c.seconds_per_patch.clear();
            const auto& sp = j.at("seconds_per_patch");
            if (sp.is_array()) {
                for (const auto& e : sp) {
                    c.seconds_per_patch.emplace_back(e.at("name").get<std::string>(), e.at("seconds").get<double>());
                }
            } else {
                for (const auto& [name, v] : sp.items()) {
                    c.seconds_per_patch.emplace_back(name, v.get<double>());
                }
            }
        }
        if (j.contains("thresholds")) {
            for (const auto& [name, v] : j.at("thresholds").items()) {
                c.thresholds[parse_curve_metric(name)] = v.get<double>();
            }
        }
        c.tissue_sigma = j.value("tissue_sigma", c.tissue_sigma);
        c.write_images = j.value("write_images", c.write_images);
        c.threads = positive_count(j, "threads", c.threads);
    } catch (const json::exception& e) {
        throw Error(std::string("config: ") + e.what());
    }
    validate(c);
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw Error("config " + path.string() + ": " + e.what());
    }
    return parse_config(j, path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path());
}

void validate(const ExperimentConfig& c) {
    if (c.name.empty() || c.name.find('/') != std::string::npos) {
        throw Error("config: name must be a non-empty path component");
    }
    if (c.magnifications.empty()) {
        throw Error("config: at least one magnification is required");
    }
    if (c.replicates_curves < 2) {
        throw Error("config: replicates_curves must be at least 2");
    }
    if (!(c.tissue_sigma >= 0.0)) {
        throw Error("config: tissue_sigma must be non-negative");
    }
    for (const auto& [name, s] : c.seconds_per_patch) {
        if (name.empty() || !(s >= 0.0)) {
            throw Error("config: seconds_per_patch entries need a name and a non-negative cost");
        }
    }
}

}  // namespace sparse_wsi::cli
