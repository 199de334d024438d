#include "commands.hpp"

#include <cstdlib>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "plot.hpp"
#include "sparse_wsi/io.hpp"
#include "sparse_wsi/parallel.hpp"

namespace sparse_wsi::cli {

namespace {

using nlohmann::json;

std::filesystem::path grid_relpath(Magnification m, const std::string& slide_id) {
    return std::filesystem::path("grids") / to_string(m) / (slide_id + ".json");
}

std::string optional_cell(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

std::string optional_cell(const std::optional<std::size_t>& v) { return v ? std::to_string(*v) : std::string(); }

json scorer_json(const ExperimentConfig& config) {
    json j = config.scorer.spec;
    j["seed"] = config.scorer.seed.value_or(config.seed);
    return j;
}

std::vector<SynthSlideSpec> synth_specs(const ExperimentConfig& config) {
    if (config.cohort.kind == CohortSource::Kind::slides) {
        return config.cohort.slides;
    }
    if (config.cohort.kind == CohortSource::Kind::counts) {
        return default_cohort_specs(config.cohort.positive, config.cohort.negative, config.seed);
    }
    throw Error("cohort is read from a manifest; nothing to synthesize");
}

SynthCohort synthesize(const ExperimentConfig& config) {
    CohortOptions options;
    options.magnifications = config.magnifications;
    options.mode = config.mode;
    options.tissue_sigma = config.tissue_sigma;
    options.threads = config.threads;
    const auto specs = synth_specs(config);
    return generate_cohort(specs, config.scorer.spec, config.seed, options);
}

json load_json(const std::filesystem::path& path) {
    try {
        return json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw Error(path.string() + ": " + e.what());
    }
}

std::size_t max_patches(std::span<const CohortSlide> cohort) {
    std::size_t n = 0;
    for (const auto& s : cohort) {
        n = std::max(n, s.grid->patches.size());
    }
    return n;
}

/// Pools per-slide (count, mean, population SD) into one population mean and SD.
std::pair<std::optional<double>, std::optional<double>> pool_ttd(std::span<const SlideEvalStats> stats) {
    double n = 0.0;
    double mean = 0.0;
    double m2 = 0.0;
    for (const auto& s : stats) {
        if (s.successful_trials == 0) {
            continue;
        }
        const double nb = static_cast<double>(s.successful_trials);
        const double delta = *s.ttd_mean - mean;
        const double total = n + nb;
        mean += delta * nb / total;
        m2 += (*s.ttd_sd) * (*s.ttd_sd) * nb + delta * delta * n * nb / total;
        n = total;
    }
    if (n == 0.0) {
        return {};
    }
    return {mean, std::sqrt(m2 / n)};
}

void write_text(const std::filesystem::path& path, const std::string& text) { write_file_atomic(path, text); }

}  // namespace

std::vector<CohortSlide> LoadedCohort::view(std::size_t m) const {
    std::vector<CohortSlide> out;
    out.reserve(slide_ids.size());
    for (std::size_t i = 0; i < slide_ids.size(); ++i) {
        out.push_back(CohortSlide{&grids[m][i], scorer.get(), positive[i]});
    }
    return out;
}

std::shared_ptr<const PatchScorer> make_scorer(const ExperimentConfig& config, const json* manifest_scorer) {
    if (!config.scorer.score_table.empty()) {
        return std::make_shared<TableScorer>(TableScorer::from_csv(read_file(config.scorer.score_table)));
    }
    SynthScorerSpec spec = config.scorer.spec;
    std::uint64_t seed = config.scorer.seed.value_or(config.seed);
    if (manifest_scorer != nullptr) {
        if (!config.scorer.explicit_spec) {
            spec = manifest_scorer->get<SynthScorerSpec>();
        }
        if (!config.scorer.seed) {
            seed = manifest_scorer->value("seed", seed);
        }
    }
    return synth_scorer(spec, seed);
}

LoadedCohort load_cohort(const ExperimentConfig& config) {
    LoadedCohort out;
    out.magnifications = config.magnifications;
    if (config.cohort.kind != CohortSource::Kind::manifest) {
        auto cohort = synthesize(config);
        out.slide_ids = cohort.slide_ids;
        for (const auto& s : cohort.specs) {
            out.positive.push_back(s.positive);
        }
        out.grids = std::move(cohort.grids);
        out.scorer = make_scorer(config, nullptr);
        return out;
    }

    const auto& path = config.cohort.manifest;
    const auto manifest = load_json(path);
    const auto base = path.parent_path();
    try {
        out.grids.resize(config.magnifications.size());
        for (const auto& slide : manifest.at("slides")) {
            out.slide_ids.push_back(slide.at("slide_id").get<std::string>());
            out.positive.push_back(slide.at("label").get<std::string>() == "positive");
            const auto& files = slide.at("grids");
            for (std::size_t m = 0; m < config.magnifications.size(); ++m) {
                const auto key = to_string(config.magnifications[m]);
                if (!files.contains(key)) {
                    throw Error("manifest has no " + key + " grid for " + out.slide_ids.back());
                }
                out.grids[m].push_back(grid_from_json_string(read_file(base / files.at(key).get<std::string>())));
            }
        }
        const json* scorer = manifest.contains("scorer") ? &manifest.at("scorer") : nullptr;
        out.scorer = make_scorer(config, scorer);
    } catch (const json::exception& e) {
        throw Error(path.string() + ": " + e.what());
    }
    if (out.slide_ids.empty()) {
        throw Error("empty cohort spec");
    }
    return out;
}

std::filesystem::path experiment_dir(const std::filesystem::path& out, const ExperimentConfig& config) {
    return out / config.name;
}

void cmd_synth(const ExperimentConfig& config, const std::filesystem::path& dir, std::ostream& log) {
    const auto cohort = synthesize(config);
    json manifest;
    manifest["name"] = config.name;
    manifest["seed"] = config.seed;
    manifest["tiling_mode"] = to_string(config.mode);
    manifest["tissue_sigma"] = config.tissue_sigma;
    manifest["label_threshold"] = cohort.label_threshold;
    manifest["scorer"] = scorer_json(config);
    json mags = json::array();
    for (auto m : config.magnifications) {
        mags.push_back(to_string(m));
    }
    manifest["magnifications"] = mags;
    manifest["slides"] = json::array();

    std::vector<json> entries(cohort.slide_ids.size());
    parallel_for(cohort.slide_ids.size(), config.threads, [&](std::size_t i) {
        const auto& id = cohort.slide_ids[i];
        json entry;
        entry["slide_id"] = id;
        entry["label"] = cohort.specs[i].positive ? "positive" : "negative";
        entry["spec"] = cohort.specs[i];
        entry["grids"] = json::object();
        entry["patch_counts"] = json::object();
        for (std::size_t m = 0; m < config.magnifications.size(); ++m) {
            const auto rel = grid_relpath(config.magnifications[m], id);
            write_text(dir / rel, grid_to_json_string(cohort.grids[m][i]));
            entry["grids"][to_string(config.magnifications[m])] = rel.generic_string();
            entry["patch_counts"][to_string(config.magnifications[m])] = cohort.grids[m][i].patches.size();
        }
        if (config.write_images) {
            const auto thumb = std::filesystem::path("images") / (id + "_thumb.pgm");
            const auto ann = std::filesystem::path("images") / (id + "_annotation.pgm");
            write_text(dir / thumb, encode_pgm(cohort.slides[i].thumbnail));
            std::vector<std::uint8_t> px(cohort.slides[i].annotation.bits());
            for (auto& p : px) {
                p = p ? 255 : 0;
            }
            write_text(dir / ann, encode_pgm(GrayImage(std::max(1, cohort.slides[i].annotation.width()),
                                                       std::max(1, cohort.slides[i].annotation.height()),
                                                       std::move(px))));
            entry["thumbnail"] = thumb.generic_string();
            entry["annotation"] = ann.generic_string();
        }
        entries[i] = std::move(entry);
    });
    for (auto& e : entries) {
        manifest["slides"].push_back(std::move(e));
    }
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
    log << "synth: " << cohort.slide_ids.size() << " slides x " << config.magnifications.size()
        << " magnifications -> " << (dir / "manifest.json").string() << "\n";
}

void cmd_tile(const ExperimentConfig& config, const TileArgs& args, const std::filesystem::path& dir,
              std::ostream& log) {
    if (args.width <= 0 || args.height <= 0) {
        throw Error("tile: --width and --height must be positive");
    }
    const auto thumb = read_pgm(args.thumbnail);
    const auto mag = args.magnification.empty() ? config.magnifications.front()
                                                : parse_magnification(args.magnification);
    const auto mode = args.mode.empty() ? config.mode : parse_tiling_mode(args.mode);
    if (args.label != "positive" && args.label != "negative") {
        throw Error("tile: --label must be positive or negative");
    }
    const bool positive = args.label == "positive";
    const double thumb_scale =
        args.thumb_scale > 0.0 ? args.thumb_scale : static_cast<double>(thumb.width()) / static_cast<double>(args.width);
    const std::string id = args.slide_id.empty() ? args.thumbnail.stem().string() : args.slide_id;

    auto grid = tile_slide(id, args.width, args.height, mag, mode, build_integral(tissue_mask(thumb, config.tissue_sigma)),
                           thumb_scale, positive);
    if (!args.annotation.empty()) {
        const auto ann = read_mask_pgm(args.annotation);
        const double ann_scale = args.ann_scale > 0.0
                                     ? args.ann_scale
                                     : static_cast<double>(ann.width()) / static_cast<double>(args.width);
        std::int64_t threshold = args.threshold;
        if (threshold <= 0) {
            const std::vector<BinaryMask> masks{ann};
            threshold = label_threshold(std::span<const BinaryMask>(masks));
        }
        grid = label_patches(std::move(grid), build_integral(ann), ann_scale, threshold);
    } else if (positive) {
        throw Error("tile: a positive slide needs --annotation");
    }
    const auto path = args.output.empty() ? dir / grid_relpath(mag, id) : args.output;
    write_text(path, grid_to_json_string(grid));
    log << "tile: " << id << " " << to_string(mag) << " " << grid.patches.size() << " patches ("
        << grid.positive_count() << " positive) -> " << path.string() << "\n";
}

void cmd_run(const ExperimentConfig& config, const RunArgs& args, const std::filesystem::path& dir, std::ostream& log) {
    if (args.replicates == 0) {
        throw Error("run: --replicates must be positive");
    }
    std::vector<SlideGrid> grids;
    std::shared_ptr<const PatchScorer> scorer;
    if (!args.grid_files.empty()) {
        for (const auto& f : args.grid_files) {
            if (!std::filesystem::exists(f)) {
                throw Error("missing grid file: " + f.string());
            }
            grids.push_back(grid_from_json_string(read_file(f)));
        }
        scorer = make_scorer(config, nullptr);
    } else {
        const auto cohort = load_cohort(config);
        const std::set<std::string> wanted(args.slides.begin(), args.slides.end());
        std::set<std::string> found;
        for (std::size_t m = 0; m < cohort.magnifications.size(); ++m) {
            for (std::size_t i = 0; i < cohort.slide_ids.size(); ++i) {
                if (wanted.empty() || wanted.count(cohort.slide_ids[i])) {
                    grids.push_back(cohort.grids[m][i]);
                    found.insert(cohort.slide_ids[i]);
                }
            }
        }
        for (const auto& w : wanted) {
            if (!found.count(w)) {
                throw Error("run: unknown slide " + w);
            }
        }
        scorer = cohort.scorer;
    }

    std::vector<std::pair<std::size_t, std::size_t>> jobs;
    for (std::size_t g = 0; g < grids.size(); ++g) {
        for (std::size_t r = 0; r < args.replicates; ++r) {
            jobs.emplace_back(g, r);
        }
    }
    parallel_for(jobs.size(), config.threads, [&](std::size_t j) {
        const auto& grid = grids[jobs[j].first];
        const std::size_t rep = jobs[j].second;
        Rng rng = Rng::for_replicate(config.seed, rep);
        const auto perm = sample_permutation(grid.patches.size(), rng);
        const auto trace = run_sequential(grid, *scorer, perm, config.candidate_list_T, config.seed ^ rep);
        const auto name = grid.slide_id + "_" + to_string(grid.magnification) + "_r" + std::to_string(rep) + ".csv";
        write_text(dir / "traces" / name, trace_to_csv(trace));
    });
    log << "run: " << jobs.size() << " traces -> " << (dir / "traces").string() << "\n";
}

void cmd_evaluate(const ExperimentConfig& config, const std::filesystem::path& dir, std::ostream& log) {
    const auto cohort = load_cohort(config);
    std::vector<std::size_t> positives;
    for (std::size_t i = 0; i < cohort.slide_ids.size(); ++i) {
        if (cohort.positive[i]) {
            positives.push_back(i);
        }
    }
    if (positives.empty()) {
        throw Error("evaluate: cohort has no positive slides");
    }

    std::ostringstream table1, slides;
    table1 << "magnification,ttd_mean,ttd_sd,miss_rate\n";
    slides << "magnification,slide_id,N,k,r,failure_rate,ttd_mean,ttd_sd,successful_trials,total_trials\n";
    for (std::size_t m = 0; m < cohort.magnifications.size(); ++m) {
        std::vector<SlideEvalStats> stats(positives.size());
        parallel_for(positives.size(), config.threads, [&](std::size_t p) {
            const auto i = positives[p];
            const auto& grid = cohort.grids[m][i];
            if (grid.positive_count() == 0) {
                // No positive patch survived tiling: the slide can never be detected.
                auto& s = stats[p];
                s.slide_id = grid.slide_id;
                s.N = grid.patches.size();
                s.r = s.N;
                s.failure_rate = 1.0;
                s.total_trials = config.trials_ttd;
                return;
            }
            Rng rng = Rng::for_replicate(config.seed, i);
            stats[p] = ttd_monte_carlo(grid, *cohort.scorer, grid.labels(), config.candidate_list_T,
                                       config.trials_ttd, rng);
        });
        const auto [mean, sd] = pool_ttd(stats);
        const auto mag = to_string(cohort.magnifications[m]);
        table1 << mag << ',' << optional_cell(mean) << ',' << optional_cell(sd) << ','
               << format_double(miss_rate(stats)) << '\n';
        for (const auto& s : stats) {
            slides << mag << ',' << s.slide_id << ',' << s.N << ',' << s.k << ',' << s.r << ','
                   << format_double(s.failure_rate) << ',' << optional_cell(s.ttd_mean) << ','
                   << optional_cell(s.ttd_sd) << ',' << s.successful_trials << ',' << s.total_trials << '\n';
        }
    }
    write_text(dir / "tables" / "table1.csv", table1.str());
    write_text(dir / "tables" / "slides.csv", slides.str());
    log << "evaluate: " << positives.size() << " positive slides -> " << (dir / "tables").string() << "\n";
}

void cmd_curves(const ExperimentConfig& config, const std::filesystem::path& dir, bool plot, std::ostream& log) {
    const auto cohort = load_cohort(config);
    const CurveMetric metrics[] = {CurveMetric::ap, CurveMetric::auc};

    std::ostringstream curves_csv, table2;
    curves_csv << "magnification,metric,n,mean,sd";
    for (const auto& [name, _] : config.seconds_per_patch) {
        curves_csv << ",seconds_" << name;
    }
    curves_csv << '\n';
    table2 << "magnification,metric,threshold,n_min,n_max\n";
    std::vector<PlotSeries> series;

    for (std::size_t m = 0; m < cohort.magnifications.size(); ++m) {
        const auto view = cohort.view(m);
        CostCurveOptions options;
        options.n_grid = config.n_grid.resolve(max_patches(view));
        options.replicates = config.replicates_curves;
        options.capacity = config.candidate_list_T;
        options.seed = config.seed;
        options.threads = config.threads;
        const auto curves = cost_curves(view, metrics, options);
        const auto mag = to_string(cohort.magnifications[m]);
        for (const auto& curve : curves) {
            for (const auto& p : curve.points) {
                curves_csv << mag << ',' << to_string(curve.metric) << ',' << p.n << ',' << format_double(p.mean)
                           << ',' << format_double(p.sd);
                for (const auto& [_, seconds] : config.seconds_per_patch) {
                    curves_csv << ',' << format_double(estimate_wall_clock(static_cast<double>(p.n), seconds));
                }
                curves_csv << '\n';
            }
            const auto it = config.thresholds.find(curve.metric);
            if (it != config.thresholds.end()) {
                const auto range = threshold_range(curve, it->second);
                table2 << mag << ',' << to_string(curve.metric) << ',' << format_double(it->second) << ','
                       << optional_cell(range.n_min) << ',' << optional_cell(range.n_max) << '\n';
            }
            series.push_back({mag, curve});
        }
    }
    write_text(dir / "tables" / "curves.csv", curves_csv.str());
    write_text(dir / "tables" / "table2.csv", table2.str());
    if (plot) {
        write_text(dir / "plots" / "curves.svg", plot_curves_svg(series));
    }
    log << "curves: " << cohort.slide_ids.size() << " slides, R=" << config.replicates_curves << " -> "
        << (dir / "tables").string() << "\n";
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Sparse sequential whole-slide inference: tiling, sampling and cost-curve evaluation"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> threads;
    bool plot = false;
    app.add_option("--config", config_path, "Experiment config JSON")->check(CLI::ExistingFile);
    app.add_option("--out", out_dir, "Output root (default $SPARSE_WSI_OUT or ./out)");
    app.add_option("--seed", seed, "Master seed, overrides the config");
    app.add_option("--threads", threads, "Worker threads, overrides the config")->check(CLI::PositiveNumber);
    app.add_flag("--plot", plot, "Also write plots/curves.svg");

    auto* synth = app.add_subcommand("synth", "Generate a synthetic cohort: grids, images and a manifest");
    auto* tile = app.add_subcommand("tile", "Tile one slide from a thumbnail and optional annotation mask");
    auto* run = app.add_subcommand("run", "Write sequential-inference traces");
    auto* evaluate = app.add_subcommand("evaluate", "Failure rate, miss rate and time-to-detection tables");
    auto* curves = app.add_subcommand("curves", "AP/AUC cost curves and threshold ranges");
    for (auto* sub : {synth, tile, run, evaluate, curves}) {
        sub->fallthrough();
    }

    TileArgs tile_args;
    tile->add_option("--thumbnail", tile_args.thumbnail, "Thumbnail PGM")->required()->check(CLI::ExistingFile);
    tile->add_option("--annotation", tile_args.annotation, "Annotation mask PGM")->check(CLI::ExistingFile);
    tile->add_option("--width", tile_args.width, "Slide width in reference pixels")->required();
    tile->add_option("--height", tile_args.height, "Slide height in reference pixels")->required();
    tile->add_option("--slide-id", tile_args.slide_id, "Slide identifier (default: thumbnail stem)");
    tile->add_option("--magnification", tile_args.magnification, "2.5x, 5x, 10x, 20x or 40x");
    tile->add_option("--mode", tile_args.mode, "inference or training");
    tile->add_option("--label", tile_args.label, "positive or negative");
    tile->add_option("--threshold", tile_args.threshold, "Goblet-pixel threshold (default: from the annotation)");
    tile->add_option("--thumb-scale", tile_args.thumb_scale, "Reference-to-thumbnail scale");
    tile->add_option("--ann-scale", tile_args.ann_scale, "Reference-to-annotation scale");
    tile->add_option("--output", tile_args.output, "Grid JSON path");

    RunArgs run_args;
    run->add_option("--slide", run_args.slides, "Slide id from the cohort (repeatable)");
    run->add_option("--grid", run_args.grid_files, "Grid JSON file (repeatable)");
    run->add_option("--replicates", run_args.replicates, "Orderings per slide");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    try {
        auto config = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
        if (seed) {
            config.seed = *seed;
        }
        if (threads) {
            config.threads = *threads;
        }
        if (out_dir.empty()) {
            const char* env = std::getenv("SPARSE_WSI_OUT");
            out_dir = env != nullptr && *env != '\0' ? env : "out";
        }
        const auto dir = experiment_dir(out_dir, config);
        if (synth->parsed()) {
            cmd_synth(config, dir, out);
        } else if (tile->parsed()) {
            cmd_tile(config, tile_args, dir, out);
        } else if (run->parsed()) {
            cmd_run(config, run_args, dir, out);
        } else if (evaluate->parsed()) {
            cmd_evaluate(config, dir, out);
        } else if (curves->parsed()) {
            cmd_curves(config, dir, plot, out);
        }
    } catch (const std::exception& e) {
        std::string msg = e.what();
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        err << "error: " << msg << "\n";
        return 1;
    }
    return 0;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    std::vector<const char*> argv{"sparse-wsi"};
    for (const auto& a : args) {
        argv.push_back(a.c_str());
    }
    return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace sparse_wsi::cli
