// Command-line front end: run, eval, ablate, tile-plan, fixtures.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "magnet/magnet.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitBackend = 3;
constexpr int kExitIO = 4;

fs::path resolve_config_path(const std::string& flag) {
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv(magnet::kConfigEnvVar); env && *env) return env;
    throw magnet::ConfigError(std::string("no config given (use --config or set ") + magnet::kConfigEnvVar + ")");
}

template <typename T>
std::vector<T> split_list(const std::string& text) {
    std::vector<T> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        std::istringstream is(item);
        T v{};
        if (!(is >> v) || !is.eof()) throw magnet::ConfigError("cannot parse list item '" + item + "'");
        out.push_back(v);
    }
    return out;
}

// "HxW" -> Extent
magnet::Extent parse_hw(const std::string& text) {
    const auto x = text.find('x');
    if (x == std::string::npos) throw magnet::ConfigError("expected HxW, got '" + text + "'");
    try {
        return {std::stoi(text.substr(0, x)), std::stoi(text.substr(x + 1))};
    } catch (const std::exception&) {
        throw magnet::ConfigError("expected HxW, got '" + text + "'");
    }
}

// ---------------------------------------------------------------------------
// run

struct RunArgs {
    std::string image;
    std::string config;
    std::string gt;
    std::string out = ".";
    std::string save_stages;
    bool fast = false;
    int workers = 0;
};

void apply_fast_default(magnet::RunConfig& cfg) {
    if (cfg.pipeline.fast) return;
    const int m = cfg.pipeline.plan.level_count();
    magnet::FastConfig fast;
    for (int s : {1, 2, m}) {
        if (s <= m && (fast.scale_subset.empty() || s > fast.scale_subset.back())) fast.scale_subset.push_back(s);
    }
    fast.patches_per_scale = 3;
    cfg.pipeline.fast = fast;
}

int cmd_run(const RunArgs& args) {
    const fs::path config_path = resolve_config_path(args.config);
    std::string config_text;
    try {
        config_text = magnet::read_text_file(config_path);
    } catch (const magnet::IOError& e) {
        throw magnet::ConfigError(e.what());
    }
    magnet::RunConfig cfg = magnet::parse_config_text(config_text);
    if (args.workers > 0) cfg.pipeline.workers = args.workers;
    if (args.fast) apply_fast_default(cfg);

    const magnet::Image image = magnet::read_image_png(args.image);
    std::optional<magnet::LabelMap> gt;
    if (!args.gt.empty()) gt = magnet::read_label_png(args.gt);
    auto modules = magnet::make_modules(cfg, config_path.parent_path(), gt ? &*gt : nullptr);

    magnet::StageEvaluation evaluation;
    if (gt) evaluation = {&*gt, cfg.classes, cfg.ignore_index};
    const auto result = magnet::run_magnet(image, cfg.pipeline, *modules.backend, *modules.combiner, evaluation);

    const fs::path out_dir = args.out;
    fs::create_directories(out_dir);
    const std::string stem = fs::path(args.image).stem().string();
    magnet::RunManifest manifest;
    manifest.config_digest = magnet::sha256_hex(config_text);
    manifest.seed = cfg.seed;
    manifest.reports = result.reports;

    const auto& final_map = result.stages.back();
    const fs::path mgt_path = out_dir / (stem + ".mgt");
    const fs::path png_path = out_dir / (stem + "_labels.png");
    magnet::write_tensor(mgt_path, magnet::to_raw(final_map));
    magnet::write_label_png(png_path, magnet::argmax_labels(final_map));
    manifest.outputs = {mgt_path.string(), png_path.string()};

    if (!args.save_stages.empty()) {
        const fs::path dir = args.save_stages;
        fs::create_directories(dir);
        for (std::size_t s = 0; s < result.stages.size(); ++s) {
            const auto base = dir / (stem + "_stage" + std::to_string(s + 1));
            magnet::write_tensor(base.string() + ".mgt", magnet::to_raw(result.stages[s]));
            magnet::write_label_png(base.string() + "_labels.png", magnet::argmax_labels(result.stages[s]));
            manifest.outputs.push_back(base.string() + ".mgt");
        }
    }

    std::ofstream reports(out_dir / (stem + "_reports.jsonl"), std::ios::trunc);
    for (const auto& r : result.reports) {
        const auto line = magnet::report_json(r).dump();
        std::cout << line << '\n';
        reports << line << '\n';
    }
    std::ofstream(out_dir / (stem + "_manifest.json"), std::ios::trunc) << magnet::manifest_json(manifest).dump(2) << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
    std::string pred_dir;
    std::string gt_dir;
    int classes = 0;
    int ignore = magnet::kDefaultIgnoreIndex;
    int bins = 20;
    std::string json_out;
    std::string cdf_out;
};

int cmd_eval(const EvalArgs& args) {
    std::vector<fs::path> gts;
    for (const auto& e : fs::directory_iterator(args.gt_dir)) {
        if (e.path().extension() == ".png") gts.push_back(e.path());
    }
    std::sort(gts.begin(), gts.end());
    if (gts.empty()) throw magnet::EmptyInput("no ground-truth PNGs in " + args.gt_dir);

    int classes = args.classes;
    std::optional<magnet::ConfusionMatrix> total;
    std::vector<double> per_image;
    json images = json::array();
    for (const auto& gt_path : gts) {
        const std::string stem = gt_path.stem().string();
        const fs::path dir = args.pred_dir;
        magnet::LabelMap pred;
        if (fs::exists(dir / (stem + ".mgt"))) {
            const auto prob = magnet::prob_map_from_raw(magnet::read_tensor(dir / (stem + ".mgt")));
            if (classes == 0) classes = prob.channels();
            pred = magnet::argmax_labels(prob);
        } else if (fs::exists(dir / (stem + "_labels.png"))) {
            pred = magnet::read_label_png(dir / (stem + "_labels.png"));
        } else if (fs::exists(dir / (stem + ".png"))) {
            pred = magnet::read_label_png(dir / (stem + ".png"));
        } else {
            throw magnet::IOError("no prediction for " + stem + " in " + args.pred_dir);
        }
        if (classes < 1) throw magnet::ConfigError("--classes is required when predictions are PNG label maps");
        const auto gt = magnet::read_label_png(gt_path);
        const auto cm = magnet::confusion(pred, gt, classes, args.ignore);
        if (!total) total.emplace(classes);
        *total += cm;
        double image_miou = 0.0;
        try {
            image_miou = magnet::miou(cm);
        } catch (const magnet::NoDefinedClasses&) {
            continue;  // fully ignored image
        }
        per_image.push_back(image_miou);
        images.push_back({{"image", stem}, {"miou", image_miou}});
    }
    if (per_image.empty()) throw magnet::EmptyInput("no evaluable images");

    json out;
    out["miou"] = magnet::miou(*total);
    out["per_class_iou"] = json::array();
    for (const auto& v : magnet::iou_per_class(*total)) out["per_class_iou"].push_back(v ? json(*v) : json(nullptr));
    out["images"] = images;
    const auto text = out.dump(2);
    std::cout << text << '\n';
    if (!args.json_out.empty()) std::ofstream(args.json_out, std::ios::trunc) << text << '\n';
    const auto csv = magnet::cdf_csv(magnet::iou_cdf(per_image, args.bins));
    if (!args.cdf_out.empty()) {
        std::ofstream(args.cdf_out, std::ios::trunc) << csv;
    } else {
        std::cout << csv;
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// ablate

struct AblateArgs {
    std::string fixtures;
    std::string config;
    std::string strategies = "uncertainty_only,certainty_only,product,linear";
    std::string alphas = "0.5";
    std::string kernels = "1,3";
    std::string ks;
    std::string out;
    int limit = 0;
};

int cmd_ablate(const AblateArgs& args) {
    const fs::path config_path = resolve_config_path(args.config);
    const magnet::RunConfig base = magnet::parse_config(config_path);
    const fs::path root = args.fixtures;
    std::vector<std::string> stems;
    for (const auto& e : fs::directory_iterator(root / "images")) {
        if (e.path().extension() == ".png") stems.push_back(e.path().stem().string());
    }
    std::sort(stems.begin(), stems.end());
    if (args.limit > 0 && static_cast<int>(stems.size()) > args.limit) stems.resize(static_cast<std::size_t>(args.limit));
    if (stems.empty()) throw magnet::EmptyInput("no fixture images under " + root.string());

    struct Sample {
        magnet::Image image;
        magnet::LabelMap gt;
    };
    std::vector<Sample> samples;
    for (const auto& s : stems) {
        samples.push_back({magnet::read_image_png(root / "images" / (s + ".png")),
                           magnet::read_label_png(root / "labels" / (s + ".png"))});
    }

    std::vector<std::size_t> ks;
    if (args.ks.empty()) {
        ks.push_back(base.pipeline.k);
    } else {
        ks = split_list<std::size_t>(args.ks);
    }

    std::ostringstream csv;
    csv << "strategy,alpha,kernel,k,miou\n";
    for (const auto& name : split_list<std::string>(args.strategies)) {
        const auto kind = magnet::parse_score_kind(name);
        if (!kind) throw magnet::ConfigError("unknown strategy '" + name + "'");
        std::vector<std::optional<float>> alphas{std::nullopt};
        if (*kind == magnet::ScoreKind::linear) {
            alphas.clear();
            for (float a : split_list<float>(args.alphas)) alphas.emplace_back(a);
        }
        for (const auto& alpha : alphas) {
            for (int kernel : split_list<int>(args.kernels)) {
                for (std::size_t k : ks) {
                    magnet::RunConfig cfg = base;
                    cfg.pipeline.strategy = {*kind, alpha, kernel};
                    cfg.pipeline.k = k;
                    if (auto v = cfg.pipeline.strategy.violation(); !v.empty()) throw magnet::ConfigError(v);
                    magnet::ConfusionMatrix cm(cfg.classes);
                    for (const auto& sample : samples) {
                        auto modules = magnet::make_modules(cfg, config_path.parent_path(), &sample.gt);
                        const auto result = magnet::run_magnet(sample.image, cfg.pipeline, *modules.backend,
                                                               *modules.combiner);
                        magnet::accumulate(cm, magnet::argmax_labels(result.stages.back()), sample.gt,
                                           cfg.ignore_index);
                    }
                    csv << name << ',' << (alpha ? std::to_string(*alpha) : "") << ',' << kernel << ',' << k << ','
                        << magnet::miou(cm) << '\n';
                }
            }
        }
    }
    if (args.out.empty()) {
        std::cout << csv.str();
    } else {
        std::ofstream(args.out, std::ios::trunc) << csv.str();
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// tile-plan

struct TilePlanArgs {
    std::string config;
    std::string image;
    std::string proc;
    std::string levels;
    std::string csv;
};

int cmd_tile_plan(const TilePlanArgs& args) {
    magnet::ScalePlan plan;
    if (!args.levels.empty()) {
        if (args.image.empty() || args.proc.empty()) throw magnet::ConfigError("--levels needs --image and --proc");
        std::vector<magnet::Extent> levels;
        for (const auto& l : split_list<std::string>(args.levels)) levels.push_back(parse_hw(l));
        const auto img = parse_hw(args.image);
        const auto proc = parse_hw(args.proc);
        try {
            plan = magnet::build_scale_plan(img.height, img.width, proc.height, proc.width, levels);
        } catch (const magnet::Error& e) {
            throw magnet::ValidationError(e.kind(), e.what());
        }
    } else {
        plan = magnet::parse_config(resolve_config_path(args.config)).pipeline.plan;
    }

    std::ostringstream csv;
    csv << "scale,index,x,y,w,h\n";
    std::size_t total = 0;
    for (int s = 1; s <= plan.level_count(); ++s) {
        const auto windows = magnet::windows_for_scale(plan, s);
        total += windows.size();
        std::cout << "scale " << s << ": window " << magnet::to_string(plan.level(s)) << ", " << windows.size()
                  << " patches\n";
        for (std::size_t i = 0; i < windows.size(); ++i) {
            const auto& w = windows[i];
            std::cout << "  " << i << ": " << magnet::to_string(w) << '\n';
            csv << s << ',' << i << ',' << w.x << ',' << w.y << ',' << w.w << ',' << w.h << '\n';
        }
    }
    std::cout << "total patches: " << total << '\n';
    if (!args.csv.empty()) std::ofstream(args.csv, std::ios::trunc) << csv.str();
    return kExitOk;
}

// ---------------------------------------------------------------------------
// fixtures

struct FixtureArgs {
    std::string out;
    magnet::FixtureSpec spec;
};

int cmd_fixtures(const FixtureArgs& args) {
    magnet::make_fixtures(args.spec, args.out);
    std::cout << "wrote " << args.spec.count << " fixtures to " << args.out << '\n';
    return kExitOk;
}

template <typename F>
int guarded(F&& fn) {
    try {
        return fn();
    } catch (const magnet::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const magnet::BackendFailure& e) {
        std::cerr << "backend error: " << e.what() << '\n';
        return kExitBackend;
    } catch (const magnet::IOError& e) {
        std::cerr << "io error: " << e.what() << '\n';
        return kExitIO;
    } catch (const magnet::EmptyInput& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitIO;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "io error: " << e.what() << '\n';
        return kExitIO;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-scale segmentation refinement"};
    app.set_version_flag("--version", std::string(magnet::kToolVersion));
    app.require_subcommand(1);

    RunArgs run;
    auto* run_cmd = app.add_subcommand("run", "Refine one image across the configured scale plan");
    run_cmd->add_option("--image", run.image, "Input PNG")->required();
    run_cmd->add_option("--config", run.config, std::string("Config file (default: $") + magnet::kConfigEnvVar + ")");
    run_cmd->add_option("--gt", run.gt, "Ground-truth label PNG (oracle backend, per-stage mIoU)");
    run_cmd->add_option("--out", run.out, "Output directory");
    run_cmd->add_option("--save-stages", run.save_stages, "Directory for every intermediate map");
    run_cmd->add_flag("--fast", run.fast, "Budgeted mode; uses the config's fast section or {1, 2, m} x 3 patches");
    run_cmd->add_option("--workers", run.workers, "Override the config's worker count");

    EvalArgs eval;
    auto* eval_cmd = app.add_subcommand("eval", "Score predictions against ground truth");
    eval_cmd->add_option("--pred-dir", eval.pred_dir, "Predictions (.mgt or label PNG, matched by stem)")->required();
    eval_cmd->add_option("--gt-dir", eval.gt_dir, "Ground-truth label PNGs")->required();
    eval_cmd->add_option("--classes", eval.classes, "Class count (taken from .mgt when omitted)");
    eval_cmd->add_option("--ignore", eval.ignore, "Ignore index");
    eval_cmd->add_option("--bins", eval.bins, "CDF bins");
    eval_cmd->add_option("--json", eval.json_out, "Write the metrics JSON here");
    eval_cmd->add_option("--cdf", eval.cdf_out, "Write the per-image IoU CDF CSV here");

    AblateArgs ablate;
    auto* ablate_cmd = app.add_subcommand("ablate", "Sweep score strategies, kernels and k over a fixture set");
    ablate_cmd->add_option("--fixtures", ablate.fixtures, "Fixture directory (images/, labels/)")->required();
    ablate_cmd->add_option("--config", ablate.config, "Base config");
    ablate_cmd->add_option("--strategies", ablate.strategies, "Comma-separated strategies");
    ablate_cmd->add_option("--alphas", ablate.alphas, "Comma-separated alphas for the linear strategy");
    ablate_cmd->add_option("--kernels", ablate.kernels, "Comma-separated median kernels");
    ablate_cmd->add_option("--ks", ablate.ks, "Comma-separated per-patch k values (default: config k)");
    ablate_cmd->add_option("--out", ablate.out, "CSV output path (default stdout)");
    ablate_cmd->add_option("--limit", ablate.limit, "Use only the first N fixtures");

    TilePlanArgs tile;
    auto* tile_cmd = app.add_subcommand("tile-plan", "Print the window grid of every scale");
    tile_cmd->add_option("--config", tile.config, "Config file");
    tile_cmd->add_option("--image", tile.image, "Image size HxW (with --levels)");
    tile_cmd->add_option("--proc", tile.proc, "Processing size HxW (with --levels)");
    tile_cmd->add_option("--levels", tile.levels, "Comma-separated HxW levels, coarsest first");
    tile_cmd->add_option("--csv", tile.csv, "Also write scale,index,x,y,w,h CSV here");

    FixtureArgs fixtures;
    auto* fix_cmd = app.add_subcommand("fixtures", "Generate a synthetic dataset");
    fix_cmd->add_option("--out", fixtures.out, "Output directory")->required();
    fix_cmd->add_option("--seed", fixtures.spec.seed, "Seed")->required();
    fix_cmd->add_option("--count", fixtures.spec.count, "Number of images")->required();
    fix_cmd->add_option("--size", fixtures.spec.size, "Square image size");
    fix_cmd->add_option("--classes", fixtures.spec.classes, "Class count");
    fix_cmd->add_option("--detail-scale", fixtures.spec.detail_scale, "Thin-structure density, 0 = none");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    if (*run_cmd) return guarded([&] { return cmd_run(run); });
    if (*eval_cmd) return guarded([&] { return cmd_eval(eval); });
    if (*ablate_cmd) return guarded([&] { return cmd_ablate(ablate); });
    if (*tile_cmd) return guarded([&] { return cmd_tile_plan(tile); });
    if (*fix_cmd) return guarded([&] { return cmd_fixtures(fixtures); });
    return kExitConfig;
}
