#include "cli.hpp"

#include "pga/attack.hpp"
#include "pga/errors.hpp"
#include "pga/evaluate.hpp"
#include "pga/ply_io.hpp"
#include "pga/reconstruction.hpp"
#include "pga/renderer.hpp"
#include "pga/toy_scene.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <sstream>

namespace pga::cli {
namespace {

// A bad flag value or config file; mapped to exit code 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

PlyPrecision file_precision(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::string line;
    while (std::getline(in, line) && line != "end_header") {
        if (line.rfind("property double", 0) == 0) return PlyPrecision::Float64;
    }
    return PlyPrecision::Float32;
}

ViewGrid load_grid(const std::string& arg) {
    for (const auto& name : grid_preset_names()) {
        if (arg == name) return grid_preset(arg);
    }
    std::ifstream in(arg);
    if (!in) throw ConfigError("grid '" + arg + "' is neither a preset nor a readable JSON file");
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return view_grid_from_json(ss.str());
    } catch (const InvalidParameter& e) {
        throw ConfigError(e.what());
    }
}

std::vector<GroundTruth> mask_ground_truth(const GaussianScene& scene, const std::vector<CameraView>& views,
                                           double threshold) {
    std::vector<GroundTruth> gts;
    for (const auto& cam : views) {
        const auto gt = ground_truth_from_mask(render_object_mask(scene, cam, threshold), kTargetClass);
        gts.push_back(gt ? *gt : GroundTruth{{0.0, 0.0, 1.0, 1.0}, kTargetClass});
    }
    return gts;
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Camouflage attacks on Gaussian-splat scenes against a toy detector", "pga"};
    app.require_subcommand(1);

    // toy-scene
    auto* toy = app.add_subcommand("toy-scene", "Write the canonical toy scene");
    std::string toy_out;
    std::uint64_t toy_seed = 1;
    bool toy_f64 = false;
    toy->add_option("-o,--out", toy_out, "Output PLY")->required();
    toy->add_option("--seed", toy_seed, "Scene seed");
    toy->add_flag("--float64", toy_f64, "Store float64 properties");

    // fit
    auto* fit = app.add_subcommand("fit", "Fit a scene to posed images");
    std::string fit_images, fit_out, fit_init;
    std::size_t fit_count = 500;
    std::vector<double> fit_box{-5, -5, -1, 5, 5, 3};
    FitConfig fit_cfg;
    fit->add_option("--images", fit_images, "Directory with manifest.json and PNGs")->required();
    fit->add_option("-o,--out", fit_out, "Output PLY")->required();
    fit->add_option("--init", fit_init, "Initial scene (default: random Gaussians in --box)");
    fit->add_option("--count", fit_count, "Random initial Gaussian count");
    fit->add_option("--box", fit_box, "xmin ymin zmin xmax ymax zmax")->expected(6);
    fit->add_option("--iters", fit_cfg.iterations, "Gradient steps");
    fit->add_option("--w-opacity", fit_cfg.w_opacity, "Opacity entropy weight");
    fit->add_option("--w-flat", fit_cfg.w_flat, "Flatness weight");
    fit->add_option("--seed", fit_cfg.rng_seed, "Seed");

    // render
    auto* rnd = app.add_subcommand("render", "Render a scene over a view grid");
    std::string rnd_scene, rnd_out, rnd_grid = "single-view";
    bool rnd_dump = false;
    rnd->add_option("--scene", rnd_scene, "Scene PLY")->required();
    rnd->add_option("-o,--out", rnd_out, "Output directory")->required();
    rnd->add_option("--grid", rnd_grid, "Grid preset or JSON file");
    rnd->add_flag("--float-dump", rnd_dump, "Also write lossless .pgaf dumps");

    // palette
    auto* pal = app.add_subcommand("palette", "Primary background colours by K-means");
    std::string pal_scene, pal_out, pal_grid = "toy";
    int pal_k = 4;
    std::uint64_t pal_seed = 0;
    pal->add_option("--scene", pal_scene, "Scene PLY")->required();
    pal->add_option("-o,--out", pal_out, "Output palette file (hex lines)");
    pal->add_option("--grid", pal_grid, "Grid preset or JSON file");
    pal->add_option("-k", pal_k, "Number of colours");
    pal->add_option("--seed", pal_seed, "Seeding RNG");

    // train-detector
    auto* trn = app.add_subcommand("train-detector", "Train the toy detector on renders of a scene");
    std::string trn_scene, trn_out, trn_dataset_out, trn_dataset;
    ToyDatasetConfig ds_cfg;
    TrainConfig tr_cfg;
    trn->add_option("--scene", trn_scene, "Scene PLY");
    trn->add_option("--dataset", trn_dataset, "Train on a saved dataset instead of rendering one");
    trn->add_option("-o,--out", trn_out, "Output weight file")->required();
    trn->add_option("--samples", ds_cfg.samples, "Random training renders");
    trn->add_option("--data-seed", ds_cfg.seed, "Dataset seed");
    trn->add_option("--seed", tr_cfg.seed, "Training seed");
    trn->add_option("--epochs", tr_cfg.epochs, "Maximum epochs");
    trn->add_option("--save-dataset", trn_dataset_out, "Write the rendered dataset here");

    // attack
    auto* atk = app.add_subcommand("attack", "Optimize the object camouflage");
    std::string atk_scene, atk_det, atk_out, atk_log, atk_cfg_path, atk_grid = "toy", atk_printable;
    int atk_iters = -1, atk_epochs = -1;
    bool atk_print = false;
    std::uint64_t atk_seed = 0;
    bool atk_seed_set = false;
    atk->add_flag("--print-default-config", atk_print, "Print the default attack config and exit");
    atk->add_option("--scene", atk_scene, "Scene PLY");
    atk->add_option("--detector", atk_det, "Detector weights");
    atk->add_option("-o,--out", atk_out, "Output PLY (default: overwrite --scene)");
    atk->add_option("--log", atk_log, "Attack log (NDJSON)");
    atk->add_option("--config", atk_cfg_path, "Attack config JSON (or PGA_ATTACK_CONFIG)");
    atk->add_option("--grid", atk_grid, "Grid preset or JSON file");
    atk->add_option("--iters", atk_iters, "Override inner_iters_per_view");
    atk->add_option("--epochs", atk_epochs, "Override outer_epochs");
    atk->add_option("--printable", atk_printable, "Printable colour file (hex lines)");
    atk->add_option("--seed", atk_seed, "Override rng_seed")->each([&](const std::string&) { atk_seed_set = true; });

    // evaluate
    auto* evl = app.add_subcommand("evaluate", "AP@0.5 over a view grid");
    std::string ev_scene, ev_det, ev_original, ev_out, ev_grid = "toy", ev_mode = "clean", ev_weather = "sunny";
    bool ev_png = false;
    evl->add_option("--scene", ev_scene, "Scene PLY")->required();
    evl->add_option("--detector", ev_det, "Detector weights")->required();
    evl->add_option("--original", ev_original, "Unattacked scene supplying the original colours");
    evl->add_option("--mode", ev_mode, "clean or camouflaged");
    evl->add_option("--grid", ev_grid, "Grid preset or JSON file");
    evl->add_option("--weather", ev_weather, "Comma-separated presets (sunny, cloudy)");
    evl->add_option("-o,--out", ev_out, "Report directory");
    evl->add_flag("--png", ev_png, "Write per-view PNGs into the report directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kExitConfig;
    }

    try {
        if (*toy) {
            ToySceneParams p;
            p.seed = toy_seed;
            const GaussianScene scene = make_toy_scene(p);
            save_scene(scene, toy_out, toy_f64 ? PlyPrecision::Float64 : PlyPrecision::Float32);
            out << "wrote " << scene.size() << " Gaussians (" << scene.object_count() << " object) to " << toy_out << '\n';
        } else if (*fit) {
            const auto images = load_posed_images(fit_images);
            const GaussianScene init =
                fit_init.empty() ? random_init_scene({fit_box[0], fit_box[1], fit_box[2]}, {fit_box[3], fit_box[4], fit_box[5]},
                                                     fit_count, 3, fit_cfg.rng_seed)
                                 : load_scene(fit_init);
            const FitResult r = fit_scene(images, init, fit_cfg);
            save_scene(r.scene, fit_out);
            out << "fit " << images.size() << " images, final loss " << r.final_loss << '\n';
        } else if (*rnd) {
            const GaussianScene scene = load_scene(rnd_scene);
            const auto views = grid_views(load_grid(rnd_grid));
            std::filesystem::create_directories(rnd_out);
            for (std::size_t i = 0; i < views.size(); ++i) {
                const RenderOutput r = render(scene, views[i].camera);
                char name[32];
                std::snprintf(name, sizeof name, "view_%04zu", i);
                write_png(r.rgb, std::filesystem::path(rnd_out) / (std::string(name) + ".png"));
                if (rnd_dump) write_float_dump(r.rgb, std::filesystem::path(rnd_out) / (std::string(name) + ".pgaf"));
            }
            out << "rendered " << views.size() << " views to " << rnd_out << '\n';
        } else if (*pal) {
            const GaussianScene scene = load_scene(pal_scene);
            const auto views = generate_view_grid(load_grid(pal_grid));
            const auto px = background_pixels(scene, views, 0.5);
            const ColorPalette p = build_palette(px, pal_k, pal_seed);
            if (p.duplicate_centroids) err << "warning: fewer distinct background colours than k; centroids repeat\n";
            if (!pal_out.empty()) save_printable_colors(p.colors, pal_out);
            for (std::size_t i = 0; i < p.colors.size(); ++i) {
                char buf[96];
                std::snprintf(buf, sizeof buf, "%.6f %.6f %.6f  %zu\n", p.colors[i][0], p.colors[i][1], p.colors[i][2],
                              p.populations[i]);
                out << buf;
            }
        } else if (*trn) {
            DetectionDataset data;
            if (!trn_dataset.empty()) {
                data = load_detection_dataset(trn_dataset);
            } else {
                if (trn_scene.empty()) throw ConfigError("train-detector needs --scene or --dataset");
                data = make_toy_dataset(load_scene(trn_scene), ds_cfg);
            }
            if (!trn_dataset_out.empty()) save_detection_dataset(data, trn_dataset_out);
            const TrainResult r = train_toy_detector(data, tr_cfg);
            save_detector(r.model, trn_out);
            out << r.report.message << '\n';
            if (!r.report.reached_target) {
                err << "training failure: " << r.report.message << '\n';
                return kExitRuntime;
            }
        } else if (*atk) {
            AttackConfig cfg;
            std::string cfg_path = atk_cfg_path;
            if (cfg_path.empty()) {
                if (const char* env = std::getenv("PGA_ATTACK_CONFIG")) cfg_path = env;
            }
            if (!cfg_path.empty()) {
                try {
                    cfg = load_attack_config(cfg_path);
                } catch (const InvalidParameter& e) {
                    throw ConfigError(e.what());
                }
            }
            if (atk_iters >= 0) cfg.inner_iters_per_view = atk_iters;
            if (atk_epochs >= 0) cfg.outer_epochs = atk_epochs;
            if (atk_seed_set) cfg.rng_seed = atk_seed;
            try {
                cfg.validate();
            } catch (const InvalidParameter& e) {
                throw ConfigError(e.what());
            }
            if (atk_print) {
                out << attack_config_to_json(cfg) << '\n';
                return kExitOk;
            }
            if (atk_scene.empty() || atk_det.empty()) throw ConfigError("attack needs --scene and --detector");
            const GaussianScene scene = load_scene(atk_scene);
            const PlyPrecision precision = file_precision(atk_scene);
            const DetectorModel det = load_detector(atk_det);
            const auto views = generate_view_grid(load_grid(atk_grid));
            AttackInputs inputs;
            if (!atk_printable.empty()) inputs.printable = load_printable_colors(atk_printable);
            const AttackResult r = run_attack(scene, views, det, mask_ground_truth(scene, views, cfg.mask_threshold), cfg, inputs);
            const std::string dest = atk_out.empty() ? atk_scene : atk_out;
            save_scene(r.scene, dest, precision);
            if (!atk_log.empty()) {
                std::ofstream log(atk_log);
                r.log.write_ndjson(log);
            }
            out << "attack: " << r.log.count(LogEvent::Iteration) << " camouflage iterations, "
                << r.log.count(LogEvent::Skip) << " skips, " << r.log.count(LogEvent::Success) << " successes; wrote "
                << dest << '\n';
        } else if (*evl) {
            const GaussianScene scene = load_scene(ev_scene);
            const DetectorModel det = load_detector(ev_det);
            EvalOptions opts;
            opts.weathers = split_csv(ev_weather);
            if (!ev_original.empty()) opts.original_k0 = zero_order_snapshot(load_scene(ev_original));
            if (ev_png && !ev_out.empty()) opts.png_dir = std::filesystem::path(ev_out) / "views";
            EvalMode mode;
            try {
                mode = eval_mode_from_string(ev_mode);
                for (const auto& w : opts.weathers) weather_preset(w);
            } catch (const InvalidParameter& e) {
                throw ConfigError(e.what());
            }
            const EvalReport rep = evaluate(scene, det, load_grid(ev_grid), mode, opts);
            if (!ev_out.empty()) write_report(rep, ev_out);
            char buf[64];
            std::snprintf(buf, sizeof buf, "%.6f", rep.overall_ap);
            out << "AP@0.5 " << buf << " over " << rep.views.size() << " views (" << rep.mode << ")\n";
            out << report_distance_csv(rep);
            if (!rep.complete) {
                err << "report incomplete: " << rep.errors.size() << " view errors\n";
                return kExitRuntime;
            }
        }
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitOk;
}

}  // namespace pga::cli
