#include "cli.hpp"

#include "profact/augment.hpp"
#include "profact/checkpoint.hpp"
#include "profact/coco.hpp"
#include "profact/config.hpp"
#include "profact/dataset.hpp"
#include "profact/error.hpp"
#include "profact/image_io.hpp"
#include "profact/mbh.hpp"
#include "profact/metrics.hpp"
#include "profact/trainer.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

namespace profact::cli {

namespace fs = std::filesystem;

namespace {

std::optional<fs::path> cache_dir() {
    if (const char* v = std::getenv("PROFACT_CACHE"); v && *v) {
        return fs::path(v);
    }
    return std::nullopt;
}

// Relative dataset paths that do not exist are looked up in PROFACT_CACHE.
fs::path resolve_dataset(const fs::path& p) {
    if (p.empty() || p.is_absolute() || fs::exists(p)) {
        return p;
    }
    if (auto cache = cache_dir(); cache && fs::exists(*cache / p)) {
        return *cache / p;
    }
    return p;
}

struct GenerateArgs {
    std::string manifest;
    std::string images;
    int synthetic = 0;
    int size = 256;
    std::string out;
    size_t n = 100;
    double mode_mix = 0.5;
    uint64_t seed = 0;
    int workers = 1;
    std::string config;
    std::string matte_dir;
    std::optional<int> trimap_radius;
    std::optional<double> op_probability;
    std::optional<double> harmonize_probability;
    std::optional<double> min_area;
    std::optional<double> max_area;
};

int cmd_generate(const GenerateArgs& a) {
    if (a.manifest.empty() == (a.synthetic == 0)) {
        std::cerr << "error: give exactly one of --manifest or --synthetic\n";
        return 1;
    }
    fs::path out = a.out;
    if (out.empty()) {
        auto cache = cache_dir();
        if (!cache) {
            std::cerr << "error: --out is required when PROFACT_CACHE is unset\n";
            return 1;
        }
        out = *cache / "generated";
    }
    GeneratorConfig cfg;
    if (!a.config.empty()) {
        cfg = read_config_file(a.config).get<GeneratorConfig>();
    }
    nlohmann::json overrides = cfg;
    if (a.trimap_radius) overrides["trimap_radius"] = *a.trimap_radius;
    if (a.op_probability) overrides["op_probability"] = *a.op_probability;
    if (a.harmonize_probability) overrides["harmonize_probability"] = *a.harmonize_probability;
    if (a.min_area) overrides["min_area"] = *a.min_area;
    if (a.max_area) overrides["max_area"] = *a.max_area;
    cfg = overrides.get<GeneratorConfig>();

    SourcePool pool = a.synthetic > 0 ? make_synthetic_pool(a.synthetic, a.size, a.size, a.seed)
                                      : pool_from_coco(load_coco(a.manifest, a.images));
    std::unique_ptr<MatteSource> matte;
    if (!a.matte_dir.empty()) {
        matte = std::make_unique<FileMatte>(a.matte_dir);
    }
    GenerateReport r = generate_dataset(pool, out, a.n, a.mode_mix, a.seed, cfg, a.workers, matte.get());
    std::cerr << "generated " << r.entries.size() << " samples (" << r.reused << " reused, " << r.skipped.size()
              << " skipped)\n";
    std::cout << r.index_path.string() << '\n';
    return r.skipped.empty() ? 0 : 2;
}

struct TrainArgs {
    std::string stage1;
    std::string stage2;
    std::string out;
    std::optional<uint64_t> seed;
    std::optional<int> workers;
};

StageConfig stage_from_args(const std::string& path, int stage, const TrainArgs& a) {
    StageConfig c = load_stage_config(path, stage);
    c.dataset = resolve_dataset(c.dataset);
    if (a.seed) c.seed = *a.seed;
    if (a.workers) c.workers = *a.workers;
    if (!a.out.empty()) c.out_dir = fs::path(a.out) / ("stage" + std::to_string(stage));
    return c;
}

void print_stage(const char* name, const StageResult& r) {
    std::cerr << name << ": " << r.epochs.size() << " epochs, " << r.steps << " steps, best IoU " << r.best_iou
              << " at epoch " << r.best_epoch << " -> " << r.best_checkpoint.string() << '\n';
}

int cmd_train(const TrainArgs& a) {
    const StageConfig s1 = stage_from_args(a.stage1, 1, a);
    std::optional<StageConfig> s2;
    if (!a.stage2.empty()) {
        s2 = stage_from_args(a.stage2, 2, a);
    }
    TwoStageResult r = two_stage_train(s1, s2);
    print_stage("stage 1", r.stage1);
    if (r.stage2) {
        print_stage("stage 2", *r.stage2);
    }
    std::cout << r.final_checkpoint.string() << '\n';
    return 0;
}

struct PredictArgs {
    std::string input;
    std::string checkpoint;
    std::string out = ".";
    double threshold = 0.5;
    uint64_t seed = 0;
};

int cmd_predict(const PredictArgs& a) {
    std::vector<fs::path> inputs;
    bool partial = false;
    if (fs::is_directory(a.input)) {
        for (const auto& e : fs::directory_iterator(a.input)) {
            if (!e.is_regular_file()) {
                continue;
            }
            if (has_image_extension(e.path())) {
                inputs.push_back(e.path());
            } else {
                std::cerr << "warning: skipping non-image file " << e.path().string() << '\n';
            }
        }
        std::sort(inputs.begin(), inputs.end());
    } else if (fs::exists(a.input)) {
        inputs.push_back(a.input);
    } else {
        throw FileNotFound("no such input: " + a.input);
    }
    LoadedCheckpoint ckpt = load_checkpoint(a.checkpoint);
    fs::create_directories(a.out);
    for (const auto& path : inputs) {
        Image image;
        try {
            image = read_image(path);
        } catch (const DataUnavailable& e) {
            std::cerr << "warning: " << e.what() << '\n';
            partial = true;
            continue;
        }
        Prediction p = ckpt.model->predict(image);
        const std::string stem = path.stem().string();
        const fs::path out(a.out);
        write_probmap(out / (stem + "_coarse.png"), p.coarse);
        write_probmap(out / (stem + "_refined.png"), p.refined);
        write_mask(out / (stem + "_mask.png"), binarize(p.refined, a.threshold));
        std::cout << (out / (stem + "_mask.png")).string() << '\n';
    }
    return partial ? 2 : 0;
}

struct EvaluateArgs {
    std::string checkpoint;
    std::string images;
    std::string masks;
    std::string dataset;
    std::string out = "eval";
    double threshold = 0.5;
    int workers = 1;
    std::string perturb;
    std::string config;
    uint64_t seed = 0;
};

void write_report(const EvalReport& r, const fs::path& stem) {
    write_report_csv(r, fs::path(stem.string() + ".csv"));
    write_summary_json(r, fs::path(stem.string() + ".json"));
    std::cout << r.label << " F1 " << r.mean_f1 << " IoU " << r.mean_iou << '\n';
}

int cmd_evaluate(const EvaluateArgs& a) {
    PerturbGrids grids;
    double threshold = a.threshold;
    if (!a.config.empty()) {
        const nlohmann::json j = read_config_file(a.config);
        reject_unknown_keys(j, {"perturbation_grids", "threshold"}, "evaluation config");
        if (j.contains("perturbation_grids")) grids = j.at("perturbation_grids").get<PerturbGrids>();
        threshold = j.value("threshold", threshold);
    }
    std::vector<EvalItem> items;
    if (!a.dataset.empty()) {
        const fs::path root = resolve_dataset(a.dataset);
        for (const IndexEntry& e : read_index(root)) {
            LabeledImage li = load_entry(root, e);
            items.push_back({li.id, std::move(li.image), std::move(li.mask)});
        }
    } else {
        if (a.images.empty() || a.masks.empty()) {
            std::cerr << "error: give --images and --masks, or --dataset\n";
            return 1;
        }
        for (LabeledImage& li : load_image_mask_dirs(a.images, a.masks)) {
            items.push_back({li.id, std::move(li.image), std::move(li.mask)});
        }
    }
    if (items.empty()) {
        throw DataUnavailable("nothing to evaluate");
    }
    LoadedCheckpoint ckpt = load_checkpoint(a.checkpoint);
    const ProFact& model = *ckpt.model;
    const Predictor predict = [&](const Image& img) { return model.predict(img).refined; };
    const fs::path out(a.out);
    fs::create_directories(out);

    EvalReport clean = evaluate_dataset(predict, items, threshold, a.workers, "clean");
    write_report(clean, out / "clean");
    std::cout << "clean: mean F1 " << clean.mean_f1 << ", mean IoU " << clean.mean_iou << '\n';
    if (!a.perturb.empty()) {
        // One summary per grid level; the clean run stays in clean.json.
        nlohmann::json summaries = nlohmann::json::array();
        const PerturbKind kind = perturb_kind_from_string(a.perturb);
        const auto reports = evaluate_perturbed(predict, items, kind, grids.levels(kind), threshold, a.workers, a.seed);
        for (size_t i = 0; i < reports.size(); ++i) {
            write_report(reports[i], out / (a.perturb + "_" + std::to_string(i)));
            nlohmann::json s = reports[i].summary();
            s["level_index"] = i;
            s["level"] = grids.levels(kind)[i];
            summaries.push_back(s);
        }
        std::ofstream(out / "summaries.json") << summaries.dump(2) << '\n';
    }
    return 0;
}

} // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"Coarse-to-fine image forgery localization: data generation, training, prediction, evaluation"};
    app.name("profact");
    app.require_subcommand(1);
    app.set_version_flag("--version", "profact 0.1.0");

    GenerateArgs g;
    auto* gen = app.add_subcommand("generate", "Synthesize forged samples with masks and an index");
    gen->add_option("--manifest", g.manifest, "COCO-style annotation JSON")->check(CLI::ExistingFile);
    gen->add_option("--images", g.images, "Image root for the manifest (default: its directory)");
    gen->add_option("--synthetic", g.synthetic, "Use N generated source images instead of a manifest");
    gen->add_option("--size", g.size, "Side of synthetic source images")->capture_default_str();
    gen->add_option("--out", g.out, "Output directory (default: $PROFACT_CACHE/generated)");
    gen->add_option("--n", g.n, "Number of samples")->capture_default_str();
    gen->add_option("--mode-mix", g.mode_mix, "Fraction of splice samples, rest copy-move")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    gen->add_option("--seed", g.seed, "Global seed")->capture_default_str();
    gen->add_option("--workers", g.workers, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
    gen->add_option("--config", g.config, "Generator config (TOML or JSON)");
    gen->add_option("--matte-dir", g.matte_dir, "Precomputed mattes named <annotation id>.png");
    gen->add_option("--trimap-radius", g.trimap_radius, "Trimap radius at a 724 px diagonal");
    gen->add_option("--op-prob", g.op_probability, "Probability of each manipulation op");
    gen->add_option("--harmonize-prob", g.harmonize_probability, "Probability of harmonization");
    gen->add_option("--min-area", g.min_area, "Smallest forged area fraction");
    gen->add_option("--max-area", g.max_area, "Largest forged area fraction");

    TrainArgs t;
    uint64_t train_seed = 0;
    int train_workers = 1;
    auto* train = app.add_subcommand("train", "Two-stage training");
    auto* s1 = train->add_option("--stage1,--config", t.stage1, "Stage-1 config (TOML or JSON)")
                   ->check(CLI::ExistingFile);
    s1->required();
    train->add_option("--stage2", t.stage2, "Stage-2 config; omit for a stage-1 only model")
        ->check(CLI::ExistingFile);
    train->add_option("--out", t.out, "Run directory (overrides the configs' out)");
    auto* tseed = train->add_option("--seed", train_seed, "Override the configs' seed");
    auto* tworkers = train->add_option("--workers", train_workers, "Override the configs' workers")
                         ->check(CLI::PositiveNumber);

    PredictArgs p;
    auto* pred = app.add_subcommand("predict", "Write coarse, refined and binary maps per image");
    pred->add_option("input", p.input, "Image file or directory")->required();
    pred->add_option("--checkpoint", p.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
    pred->add_option("--out", p.out, "Output directory")->capture_default_str();
    pred->add_option("--threshold", p.threshold, "Binarization threshold")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    pred->add_option("--seed", p.seed, "Accepted for uniformity; prediction is deterministic");

    EvaluateArgs e;
    auto* eval = app.add_subcommand("evaluate", "Pixel-level F1/IoU, optionally under a perturbation sweep");
    eval->add_option("--checkpoint", e.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
    eval->add_option("--images", e.images, "Image directory");
    eval->add_option("--masks", e.masks, "Mask directory (same stems as the images)");
    eval->add_option("--dataset", e.dataset, "Generated dataset root (index.jsonl) instead of directories");
    eval->add_option("--out", e.out, "Output directory for CSV and JSON summaries")->capture_default_str();
    eval->add_option("--threshold", e.threshold, "Binarization threshold")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    eval->add_option("--workers", e.workers, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
    eval->add_option("--perturb", e.perturb, "Robustness sweep: jpeg, blur, noise or resize");
    eval->add_option("--config", e.config, "Evaluation config with perturbation_grids (TOML or JSON)");
    eval->add_option("--seed", e.seed, "Noise seed for perturbations")->capture_default_str();

    std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
    try {
        app.parse(reversed);
    } catch (const CLI::Success& ok) {
        return app.exit(ok);
    } catch (const CLI::ParseError& err) {
        app.exit(err);
        return 1;
    }

    try {
        if (*gen) return cmd_generate(g);
        if (*train) {
            if (*tseed) t.seed = train_seed;
            if (*tworkers) t.workers = train_workers;
            return cmd_train(t);
        }
        if (*pred) return cmd_predict(p);
        if (*eval) return cmd_evaluate(e);
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << '\n';
        return 1;
    }
    return 1;
}

} // namespace profact::cli
