// fyolo: dataset preparation, training, evaluation, detection and
// benchmarking for the fire detector. See README.md for usage.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <random>
#include <string>

#include "fireyolo/dataset.hpp"
#include "fireyolo/detector.hpp"
#include "fireyolo/inference.hpp"
#include "fireyolo/loss.hpp"
#include "fireyolo/metrics.hpp"
#include "fireyolo/overlay.hpp"
#include "fireyolo/runconfig.hpp"
#include "fireyolo/training.hpp"

namespace fs = std::filesystem;

namespace {

struct GlobalOpts {
    std::string config_path;
    std::string out_dir = "out";
    int seed = 42;
    bool quiet = false;
};

// defaults < config file < explicit command-line flags
class Resolver {
  public:
    Resolver(CLI::App* cmd, const GlobalOpts& g) : cmd_(cmd) {
        if (!g.config_path.empty()) file_ = fy::parse_config_file(g.config_path);
        set("seed", std::to_string(g.seed));
        set("out", g.out_dir);
        bind("seed", "--seed");
        bind("out", "--out");
        capture_flag("seed", std::to_string(g.seed));
        capture_flag("out", g.out_dir);
    }
    void set(const std::string& key, const std::string& def) { values_[key] = def; }

    // materialize: file value wins over default, a flag the user passed wins over both
    void finalize() {
        for (auto& [k, v] : values_) {
            auto it = file_.find(k);
            if (it != file_.end()) v = it->second;
            const CLI::Option* opt = flag_of(k);
            if (opt && opt->count() > 0) v = flag_values_[k];
        }
    }
    void bind(const std::string& key, const std::string& flag_name) { flags_[key] = flag_name; }
    void capture_flag(const std::string& key, const std::string& value) {
        flag_values_[key] = value;
    }
    const std::string& get(const std::string& key) const { return values_.at(key); }
    int get_int(const std::string& key) const { return std::stoi(get(key)); }
    float get_float(const std::string& key) const { return std::stof(get(key)); }
    bool get_bool(const std::string& key) const { return get(key) == "1" || get(key) == "true"; }

    void echo(const std::string& out_dir, const std::string& command) const {
        fy::KeyValueConfig echo = values_;
        echo["command"] = command;
        fy::write_resolved_config((fs::path(out_dir) / "config_resolved.txt").string(), echo);
    }

  private:
    const CLI::Option* flag_of(const std::string& key) const {
        auto it = flags_.find(key);
        if (it == flags_.end()) return nullptr;
        for (const CLI::App* a = cmd_; a != nullptr; a = a->get_parent()) {
            const CLI::Option* opt = a->get_option_no_throw(it->second);
            if (opt) return opt;
        }
        return nullptr;
    }
    CLI::App* cmd_;
    fy::KeyValueConfig file_, values_, flag_values_;
    std::map<std::string, std::string> flags_;
};

fy::ModelConfig model_config_from(const Resolver& r) {
    auto cfg = fy::ModelConfig::preset(r.get("preset"), r.get_int("classes"), r.get_int("size"));
    if (!r.get("width").empty()) {
        cfg.width_multiple = std::stof(r.get("width"));
        cfg.preset_name = "custom";
    }
    if (!r.get("depth").empty()) {
        cfg.depth_multiple = std::stof(r.get("depth"));
        cfg.preset_name = "custom";
    }
    cfg.validate();
    return cfg;
}

std::vector<fy::AnnotatedImage> load_and_resize(const std::string& data_dir, int size) {
    fy::RejectionReport report;
    auto images = fy::load_dataset((fs::path(data_dir) / "images").string(),
                                   (fs::path(data_dir) / "labels").string(), report);
    std::vector<fy::AnnotatedImage> out;
    out.reserve(images.size());
    for (auto& img : images) out.push_back(fy::stretch_resize(img, size));
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fire detector pipeline"};
    app.require_subcommand(1);
    GlobalOpts g;
    app.add_option("--config", g.config_path, "key=value config file");
    app.add_option("--out", g.out_dir, "output directory");
    app.add_option("--seed", g.seed, "global random seed");
    app.add_flag("--quiet", g.quiet, "suppress progress output");

    // ---- dataset ----
    auto* ds = app.add_subcommand("dataset", "dataset preparation");
    ds->require_subcommand(1);
    std::string ds_dir;
    auto* ds_validate = ds->add_subcommand("validate", "check labels, write rejection report");
    ds_validate->add_option("--data", ds_dir, "dataset dir with images/ and labels/")->required();
    auto* ds_split = ds->add_subcommand("split", "write a train/val split manifest");
    float split_ratio = 0.5f;
    ds_split->add_option("--data", ds_dir)->required();
    ds_split->add_option("--ratio", split_ratio);
    auto* ds_synth = ds->add_subcommand("synth", "generate a synthetic fire-blob dataset");
    int synth_count = 200, synth_size = 416;
    ds_synth->add_option("--count", synth_count);
    ds_synth->add_option("--size", synth_size);

    // ---- train ----
    auto* tr = app.add_subcommand("train", "train a model");
    std::string tr_preset = "n", tr_data, tr_width, tr_depth;
    int tr_epochs = 200, tr_batch = 64, tr_classes = 1, tr_size = 416, tr_synth = 0;
    float tr_lr = 0.001f, tr_ratio = 0.5f;
    bool tr_decay = false;
    tr->add_option("--preset", tr_preset, "model preset n/s/m/l/x");
    tr->add_option("--width", tr_width, "override width multiple");
    tr->add_option("--depth", tr_depth, "override depth multiple");
    tr->add_option("--data", tr_data, "dataset dir (images/ + labels/)");
    tr->add_option("--synthetic", tr_synth, "use a generated dataset of this many images");
    tr->add_option("--epochs", tr_epochs);
    tr->add_option("--batch", tr_batch);
    tr->add_option("--lr", tr_lr);
    tr->add_option("--classes", tr_classes);
    tr->add_option("--size", tr_size, "square input size (multiple of 32)");
    tr->add_option("--ratio", tr_ratio, "train fraction of the split");
    tr->add_flag("--lr-decay", tr_decay, "linear lr decay to 10% over the run");

    // ---- eval ----
    auto* ev = app.add_subcommand("eval", "evaluate checkpoints");
    std::vector<std::string> ev_ckpts;
    std::string ev_data;
    int ev_synth = 0;
    float ev_ratio = 0.5f;
    bool ev_trainside = false;
    ev->add_option("ckpt", ev_ckpts, "checkpoint(s); two or more produce a comparison table")
        ->required();
    ev->add_option("--data", ev_data, "dataset dir");
    ev->add_option("--synthetic", ev_synth, "evaluate on this many generated images");
    ev->add_option("--ratio", ev_ratio);
    ev->add_flag("--train-side", ev_trainside, "evaluate on the train side of the split");

    // ---- detect ----
    auto* de = app.add_subcommand("detect", "run detection on an image or frame dir");
    std::string de_ckpt, de_input;
    float de_conf = 0.25f, de_nms = 0.45f;
    bool de_overlay = false;
    de->add_option("--ckpt", de_ckpt)->required();
    de->add_option("--input", de_input, "a .ppm image or a directory of frames")->required();
    de->add_option("--conf", de_conf);
    de->add_option("--nms", de_nms);
    de->add_flag("--overlay", de_overlay, "write per-frame SVG overlays");

    // ---- bench ----
    auto* be = app.add_subcommand("bench", "inference timing on synthetic frames");
    std::string be_ckpt;
    int be_frames = 20, be_size = 416;
    be->add_option("--ckpt", be_ckpt)->required();
    be->add_option("--frames", be_frames);
    be->add_option("--size", be_size);

    CLI11_PARSE(app, argc, argv);

    try {
        fs::create_directories(g.out_dir);

        if (ds_validate->parsed() || ds_split->parsed() || ds_synth->parsed()) {
            CLI::App* sub = ds_validate->parsed() ? ds_validate
                            : ds_split->parsed()  ? ds_split
                                                  : ds_synth;
            Resolver r(sub, g);
            if (ds_synth->parsed()) {
                r.set("count", std::to_string(synth_count));
                r.set("size", std::to_string(synth_size));
                r.bind("count", "--count");
                r.bind("size", "--size");
                r.capture_flag("count", std::to_string(synth_count));
                r.capture_flag("size", std::to_string(synth_size));
                r.finalize();
                r.echo(g.out_dir, "dataset synth");
                auto imgs = fy::generate_synthetic(r.get_int("count"), r.get_int("size"),
                                                   r.get_int("seed"));
                fy::write_dataset(g.out_dir, imgs);
                if (!g.quiet)
                    std::printf("wrote %zu synthetic images to %s\n", imgs.size(),
                                g.out_dir.c_str());
                return 0;
            }
            r.set("data", ds_dir);
            r.finalize();
            fy::RejectionReport report;
            auto images = fy::load_dataset((fs::path(ds_dir) / "images").string(),
                                           (fs::path(ds_dir) / "labels").string(), report);
            if (ds_validate->parsed()) {
                r.echo(g.out_dir, "dataset validate");
                report.write_csv((fs::path(g.out_dir) / "rejections.csv").string());
                if (!g.quiet)
                    std::printf("loaded %zu, rejected %zu\n", images.size(),
                                report.entries.size());
                return report.entries.empty() ? 0 : 2;
            }
            // split
            r.set("ratio", std::to_string(split_ratio));
            r.bind("ratio", "--ratio");
            r.capture_flag("ratio", std::to_string(split_ratio));
            r.finalize();
            r.echo(g.out_dir, "dataset split");
            auto s = fy::split(std::move(images), std::stof(r.get("ratio")), r.get_int("seed"));
            fy::write_split_manifest((fs::path(g.out_dir) / "split_manifest.txt").string(), s);
            if (!g.quiet)
                std::printf("split: %zu train / %zu val\n", s.train.size(), s.val.size());
            return 0;
        }

        if (tr->parsed()) {
            Resolver r(tr, g);
            r.set("preset", tr_preset);
            r.set("width", tr_width);
            r.set("depth", tr_depth);
            r.set("data", tr_data);
            r.set("synthetic", std::to_string(tr_synth));
            r.set("epochs", std::to_string(tr_epochs));
            r.set("batch", std::to_string(tr_batch));
            r.set("lr", std::to_string(tr_lr));
            r.set("classes", std::to_string(tr_classes));
            r.set("size", std::to_string(tr_size));
            r.set("ratio", std::to_string(tr_ratio));
            r.set("lr_decay", tr_decay ? "1" : "0");
            for (auto [k, f] : std::initializer_list<std::pair<const char*, const char*>>{
                     {"preset", "--preset"}, {"width", "--width"}, {"depth", "--depth"},
                     {"data", "--data"}, {"synthetic", "--synthetic"}, {"epochs", "--epochs"},
                     {"batch", "--batch"}, {"lr", "--lr"}, {"classes", "--classes"},
                     {"size", "--size"}, {"ratio", "--ratio"}, {"lr_decay", "--lr-decay"}})
                r.bind(k, f);
            r.capture_flag("preset", tr_preset);
            r.capture_flag("width", tr_width);
            r.capture_flag("depth", tr_depth);
            r.capture_flag("data", tr_data);
            r.capture_flag("synthetic", std::to_string(tr_synth));
            r.capture_flag("epochs", std::to_string(tr_epochs));
            r.capture_flag("batch", std::to_string(tr_batch));
            r.capture_flag("lr", std::to_string(tr_lr));
            r.capture_flag("classes", std::to_string(tr_classes));
            r.capture_flag("size", std::to_string(tr_size));
            r.capture_flag("ratio", std::to_string(tr_ratio));
            r.capture_flag("lr_decay", tr_decay ? "1" : "0");
            r.finalize();
            r.echo(g.out_dir, "train");

            const int seed = r.get_int("seed");
            const int size = r.get_int("size");
            std::vector<fy::AnnotatedImage> images;
            if (r.get_int("synthetic") > 0) {
                images = fy::generate_synthetic(r.get_int("synthetic"), size, seed);
            } else if (!r.get("data").empty()) {
                images = load_and_resize(r.get("data"), size);
            } else {
                std::cerr << "train: need --data or --synthetic\n";
                return 1;
            }
            auto split = fy::split(std::move(images), r.get_float("ratio"), seed);
            auto cfg = model_config_from(r);
            auto model = fy::build_model(cfg, static_cast<uint64_t>(seed));
            fy::OptimizerConfig ocfg;
            ocfg.learning_rate = r.get_float("lr");
            ocfg.epochs = r.get_int("epochs");
            ocfg.batch_size = r.get_int("batch");
            ocfg.linear_lr_decay = r.get_bool("lr_decay");
            fy::LossConfig lcfg;
            try {
                fy::train(model, split.train, split.val, ocfg, lcfg, seed, g.out_dir, g.quiet);
            } catch (const fy::TrainingDiverged& e) {
                std::cerr << e.what() << "\n";
                return 3;
            }
            return 0;
        }

        if (ev->parsed()) {
            Resolver r(ev, g);
            r.set("data", ev_data);
            r.set("synthetic", std::to_string(ev_synth));
            r.set("ratio", std::to_string(ev_ratio));
            r.finalize();
            r.echo(g.out_dir, "eval");
            const int seed = r.get_int("seed");
            std::vector<fy::EvaluationReport> reports;
            for (const auto& ckpt : ev_ckpts) {
                auto model = fy::load_model(ckpt);
                std::vector<fy::AnnotatedImage> images;
                if (r.get_int("synthetic") > 0)
                    images = fy::generate_synthetic(r.get_int("synthetic"), model.cfg.input_size,
                                                    seed);
                else if (!r.get("data").empty())
                    images = load_and_resize(r.get("data"), model.cfg.input_size);
                else {
                    std::cerr << "eval: need --data or --synthetic\n";
                    return 1;
                }
                auto split = fy::split(std::move(images), r.get_float("ratio"), seed);
                const auto& side = ev_trainside ? split.train : split.val;
                if (side.empty()) {
                    std::cerr << "eval: evaluation set is empty\n";
                    return 1;
                }
                auto rep = fy::validate_model(model, side);
                rep.model_id = fs::path(ckpt).stem().string();
                rep.model_size_bytes = static_cast<long>(fs::file_size(ckpt));
                std::printf("%s: mAP@0.5 %.4f  P %.4f R %.4f F1 %.4f (at conf %.2f)\n",
                            rep.model_id.c_str(), rep.map50, rep.precision, rep.recall,
                            rep.best_f1, rep.best_f1_threshold);
                fy::emit_curves(rep, (fs::path(g.out_dir) / rep.model_id).string());
                reports.push_back(std::move(rep));
            }
            std::string table = fy::compare_models(
                reports, (fs::path(g.out_dir) / "comparison.csv").string());
            if (reports.size() > 1 && !g.quiet) std::printf("%s", table.c_str());
            return 0;
        }

        if (de->parsed()) {
            Resolver r(de, g);
            r.set("conf", std::to_string(de_conf));
            r.set("nms", std::to_string(de_nms));
            r.bind("conf", "--conf");
            r.bind("nms", "--nms");
            r.capture_flag("conf", std::to_string(de_conf));
            r.capture_flag("nms", std::to_string(de_nms));
            r.finalize();
            r.echo(g.out_dir, "detect");
            auto model = fy::load_model(de_ckpt);
            fy::InferenceConfig icfg;
            icfg.conf_threshold = r.get_float("conf");
            icfg.nms_iou_threshold = r.get_float("nms");
            fy::SequenceResult sr;
            if (fs::is_directory(de_input)) {
                sr = fy::detect_sequence(model, de_input, icfg);
                if (sr.frames.empty() && sr.skipped.size() > 0) {
                    std::cerr << "detect: no readable frames in " << de_input << "\n";
                    return 1;
                }
            } else {
                fy::Image img;
                try {
                    img = fy::read_ppm(de_input);
                } catch (const std::exception& e) {
                    std::cerr << "detect: " << e.what() << "\n";
                    return 1;
                }
                auto res = fy::detect_image(model, img, icfg);
                sr.frames.emplace_back(fs::path(de_input).filename().string(),
                                       std::move(res.detections));
                sr.timing = fy::TimingSummary::from_latencies({res.latency_seconds});
            }
            fy::write_detections_csv((fs::path(g.out_dir) / "detections.csv").string(),
                                     sr.frames);
            sr.timing.write_csv((fs::path(g.out_dir) / "timing.csv").string());
            if (de_overlay) {
                for (const auto& [name, dets] : sr.frames) {
                    fs::path src = fs::is_directory(de_input) ? fs::path(de_input) / name
                                                              : fs::path(de_input);
                    fy::write_overlay_svg(
                        (fs::path(g.out_dir) / (fs::path(name).stem().string() + ".svg"))
                            .string(),
                        fy::read_ppm(src.string()), dets);
                }
            }
            if (!g.quiet)
                std::printf("%ld frame(s), mean %.4fs, %.2f fps\n", sr.timing.frames,
                            sr.timing.mean_s, sr.timing.fps);
            return 0;
        }

        if (be->parsed()) {
            Resolver r(be, g);
            r.set("frames", std::to_string(be_frames));
            r.set("size", std::to_string(be_size));
            r.bind("frames", "--frames");
            r.bind("size", "--size");
            r.capture_flag("frames", std::to_string(be_frames));
            r.capture_flag("size", std::to_string(be_size));
            r.finalize();
            r.echo(g.out_dir, "bench");
            auto model = fy::load_model(be_ckpt);
            fy::InferenceConfig icfg;
            std::mt19937 rng(static_cast<uint32_t>(r.get_int("seed")));
            std::vector<double> latencies;
            for (int i = 0; i < r.get_int("frames"); ++i) {
                fy::Image frame = fy::synthetic_background(rng, r.get_int("size"));
                latencies.push_back(fy::detect_image(model, frame, icfg).latency_seconds);
            }
            auto timing = fy::TimingSummary::from_latencies(std::move(latencies));
            timing.write_csv((fs::path(g.out_dir) / "timing.csv").string());
            std::printf("frames=%ld mean_s=%.4f median_s=%.4f max_s=%.4f fps=%.2f\n",
                        timing.frames, timing.mean_s, timing.median_s, timing.max_s, timing.fps);
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
