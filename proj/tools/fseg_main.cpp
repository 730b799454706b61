// Command-line front end: train / eval / predict / gradcheck / synth / info.
// Exit codes: 0 success, 1 failed verification, 2 configuration error,
// 3 data error, 4 numeric divergence.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include "CLI11.hpp"
#include "fseg/config.hpp"
#include "fseg/image_io.hpp"
#include "fseg/metrics.hpp"
#include "fseg/train.hpp"
#include "fseg/verify.hpp"

namespace fs = std::filesystem;
using namespace fseg;

namespace {

constexpr int kExitVerify = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitDiverged = 4;

SyntheticSpec parse_synth_spec(const std::string& text) {
    SyntheticSpec spec;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const size_t eq = item.find('=');
        if (eq == std::string::npos)
            throw ConfigError("synthetic spec: expected key=value, got '" + item + "'");
        const std::string key = item.substr(0, eq), value = item.substr(eq + 1);
        if (key == "count") spec.count = RunConfig::parse_size(key, value);
        else if (key == "res") spec.resolution = RunConfig::parse_size(key, value);
        else if (key == "seed") spec.seed = RunConfig::parse_size(key, value);
        else if (key == "blobs_min") spec.blob_min = RunConfig::parse_size(key, value);
        else if (key == "blobs_max") spec.blob_max = RunConfig::parse_size(key, value);
        else if (key == "radius_min") spec.radius_min = RunConfig::parse_real(key, value);
        else if (key == "radius_max") spec.radius_max = RunConfig::parse_real(key, value);
        else if (key == "noise") spec.noise = RunConfig::parse_real(key, value);
        else if (key == "camouflage") spec.camouflage = RunConfig::parse_real(key, value);
        else throw ConfigError("synthetic spec: unknown key " + key);
    }
    return spec;
}

RunConfig build_config(const std::string& config_path,
                       const std::vector<std::string>& overrides) {
    RunConfig cfg;
    if (!config_path.empty()) cfg.load_file(config_path);
    for (const auto& kv : overrides) {
        const size_t eq = kv.find('=');
        if (eq == std::string::npos)
            throw ConfigError("--set expects key=value, got '" + kv + "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cfg;
}

FocusNet<float> model_from_checkpoint(const Checkpoint& ck, RunConfig& cfg_out) {
    cfg_out.load_string(ck.config_echo, "<checkpoint>");
    FocusNet<float> model = FocusNet<float>::make(cfg_out.model, cfg_out.train.seed);
    ParamMap<float> pm = model.parameters();
    apply_checkpoint(ck, pm);
    return model;
}

std::vector<uint8_t> to_gray_bytes(const Tensor<float>& chw) {
    // per-channel mean, then min-max normalized to [0,255]
    const size_t c = chw.dim(1), h = chw.dim(2), w = chw.dim(3);
    std::vector<double> mean(h * w, 0.0);
    for (size_t ci = 0; ci < c; ++ci)
        for (size_t i = 0; i < h * w; ++i)
            mean[i] += (double)chw.data()[ci * h * w + i] / (double)c;
    double lo = mean[0], hi = mean[0];
    for (double v : mean) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double range = hi > lo ? hi - lo : 1.0;
    std::vector<uint8_t> out(h * w);
    for (size_t i = 0; i < h * w; ++i)
        out[i] = (uint8_t)std::lround(255.0 * (mean[i] - lo) / range);
    return out;
}

void write_dataset(const std::vector<Sample>& samples, const std::string& dir) {
    fs::create_directories(fs::path(dir) / "images");
    fs::create_directories(fs::path(dir) / "masks");
    size_t idx = 0;
    for (const auto& s : samples) {
        char stem[32];
        std::snprintf(stem, sizeof(stem), "synth%04zu", idx++);
        const size_t h = s.image.dim(1), w = s.image.dim(2);
        std::vector<uint8_t> rgb(h * w * 3), m(h * w);
        for (size_t y = 0; y < h; ++y)
            for (size_t x = 0; x < w; ++x)
                for (size_t c = 0; c < 3; ++c)
                    rgb[(y * w + x) * 3 + c] =
                        (uint8_t)std::lround(255.0f * s.image.data()[(c * h + y) * w + x]);
        for (size_t i = 0; i < h * w; ++i)
            m[i] = s.mask.data()[i] >= 0.5f ? 255 : 0;
        write_rgb_png((fs::path(dir) / "images" / (std::string(stem) + ".png")).string(), h, w,
                      rgb);
        write_gray_png((fs::path(dir) / "masks" / (std::string(stem) + ".png")).string(), h, w,
                       m);
    }
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides,
              const std::string& data_root, const std::string& synth_spec,
              const std::string& out_dir, int64_t seed_flag) {
    RunConfig cfg = build_config(config_path, overrides);
    if (seed_flag >= 0) cfg.train.seed = (uint64_t)seed_flag;
    if (data_root.empty() == synth_spec.empty())
        throw ConfigError("train: exactly one of --data and --synthetic is required");
    cfg.model.validate();
    cfg.train.validate();

    std::vector<Sample> train_set, val_set;
    if (!synth_spec.empty()) {
        SyntheticSpec spec = parse_synth_spec(synth_spec);
        spec.resolution = cfg.model.input_h;
        train_set = gen_synthetic(spec);
        val_set = train_set;  // overfit protocol: validate on the train set
    } else {
        train_set = load_dataset(data_root, "train", cfg.model.input_h);
        if (fs::is_directory(fs::path(data_root) / "val"))
            val_set = load_dataset(data_root, "val", cfg.model.input_h);
        else
            val_set = train_set;
    }

    fs::create_directories(out_dir);
    {
        std::ofstream echo(fs::path(out_dir) / "config.txt");
        echo << cfg.echo();
    }

    FocusNet<float> model = FocusNet<float>::make(cfg.model, cfg.train.seed);
    std::ofstream log(fs::path(out_dir) / "log.txt");
    TrainResult<float> result =
        train(model, train_set, val_set, cfg.train, [&](const EpochRecord& rec) {
            const std::string line = format_epoch(rec);
            std::cout << line << "\n";
            log << line << "\n";
        });
    log.flush();

    result.best.config_echo = cfg.echo();
    save_checkpoint(result.best, (fs::path(out_dir) / "best.fseg").string());
    Checkpoint final_ck = checkpoint_from_params(model.parameters(), cfg.echo());
    save_checkpoint(final_ck, (fs::path(out_dir) / "final.fseg").string());
    std::cout << "best_epoch=" << result.best_epoch << " best_val_mdsc=" << result.best_val_mdsc
              << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir,
             const std::string& baseline_path, const std::string& json_out) {
    RunConfig cfg;
    FocusNet<float> model = model_from_checkpoint(load_checkpoint(ckpt_path), cfg);
    std::vector<Sample> samples = load_dataset(data_dir, cfg.model.input_h);
    MetricsReport rep = evaluate(model, samples);

    if (!baseline_path.empty()) {
        std::ifstream in(baseline_path);
        if (!in) throw DataError("cannot open baseline report: " + baseline_path);
        nlohmann::json j;
        in >> j;
        MetricsReport base = report_from_json(j);
        if (base.rows.size() != rep.rows.size())
            throw DataError("baseline report has a different number of images");
        std::vector<double> a, b;
        for (size_t i = 0; i < rep.rows.size(); ++i) {
            if (base.rows[i].id != rep.rows[i].id)
                throw DataError("baseline pairing error at image id " + rep.rows[i].id);
            a.push_back(rep.rows[i].mdsc);
            b.push_back(base.rows[i].mdsc);
        }
        rep.has_pvalue = true;
        rep.pvalue_vs = fs::path(baseline_path).stem().string();
        rep.pvalue = wilcoxon_signed_rank(a, b);
    }

    std::cout << format_report(rep);
    if (!json_out.empty()) {
        std::ofstream out(json_out);
        out << report_to_json(rep).dump(2) << "\n";
    }
    return 0;
}

int cmd_predict(const std::string& ckpt_path, const std::string& image_path,
                const std::string& out_path, const std::string& dump_dir) {
    RunConfig cfg;
    FocusNet<float> model = model_from_checkpoint(load_checkpoint(ckpt_path), cfg);
    Sample s = load_pair(image_path, image_path, cfg.model.input_h, "input");

    NoGradGuard ng;
    std::vector<float> img(s.image.data());
    Tensor<float> x(Shape{1, 3, cfg.model.input_h, cfg.model.input_w}, std::move(img));
    Rng rng(0);
    auto heads = model.forward(x, rng, false);
    Tensor<float> prob = sigmoid(heads.phat);
    const size_t h = prob.dim(2), w = prob.dim(3);
    std::vector<uint8_t> mask(h * w);
    for (size_t i = 0; i < h * w; ++i) mask[i] = prob.data()[i] >= 0.5f ? 255 : 0;
    write_gray_png(out_path, h, w, mask);

    if (!dump_dir.empty()) {
        fs::create_directories(dump_dir);
        const std::pair<const char*, const Tensor<float>*> maps[] = {
            {"f1.png", &heads.f1},         {"f2.png", &heads.f2},
            {"t_detail.png", &heads.t_detail}, {"fhat1.png", &heads.fhat1},
            {"fhat2.png", &heads.fhat2}};
        for (const auto& [name, t] : maps)
            write_gray_png((fs::path(dump_dir) / name).string(), t->dim(2), t->dim(3),
                           to_gray_bytes(*t));
    }
    return 0;
}

int cmd_gradcheck(const std::string& module, uint64_t seed, size_t seeds) {
    bool all_pass = true;
    std::map<std::string, VerifyResult> merged;
    for (size_t si = 0; si < seeds; ++si) {
        for (const auto& r : verify_module(module, seed + si)) {
            auto& slot = merged.emplace(r.name, VerifyResult{r.name}).first->second;
            slot.max_rel_err = std::max(slot.max_rel_err, r.max_rel_err);
            slot.pass = slot.pass && r.pass;
        }
    }
    for (const auto& [name, r] : merged) {
        std::cout << name << " worst_rel_err=" << r.max_rel_err << " "
                  << (r.pass ? "pass" : "FAIL") << "\n";
        all_pass = all_pass && r.pass;
    }
    if (!all_pass) {
        std::cerr << "gradient verification failed\n";
        return kExitVerify;
    }
    return 0;
}

int cmd_info(const std::string& ckpt_path, const std::string& config_path,
             const std::vector<std::string>& overrides) {
    RunConfig cfg;
    std::optional<FocusNet<float>> model;
    if (ckpt_path.empty()) {
        cfg = build_config(config_path, overrides);
        cfg.model.validate();
        model = FocusNet<float>::make(cfg.model, cfg.train.seed);
    } else {
        model = model_from_checkpoint(load_checkpoint(ckpt_path), cfg);
    }
    const auto table = cost_table(*model, cfg.model.input_h, cfg.model.input_w);
    size_t total_params = 0, total_macs = 0;
    for (const auto& mc : table) {
        std::cout << "module=" << mc.name << " params=" << mc.params << " macs=" << mc.macs
                  << "\n";
        total_params += mc.params;
        total_macs += mc.macs;
    }
    std::cout << "total params=" << total_params << " macs=" << total_macs << "\n";
    if (total_params != count_params(*model))
        throw std::logic_error("parameter accounting mismatch");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"FocusNet-style polyp segmentation toolkit"};
    app.require_subcommand(1);

    std::string config_path, data_root, synth_spec, out_dir, ckpt_path, image_path;
    std::string baseline_path, json_out, dump_dir, module = "all";
    std::vector<std::string> overrides;
    int64_t seed_flag = -1;
    uint64_t gc_seed = 1;
    size_t gc_seeds = 3;

    auto* t = app.add_subcommand("train", "train a model");
    t->add_option("--config", config_path, "key=value config file");
    t->add_option("--set", overrides, "override a config key (key=value)");
    t->add_option("--data", data_root, "dataset root with train/[val]/ splits");
    t->add_option("--synthetic", synth_spec, "synthetic spec, e.g. count=8,res=64,seed=1");
    t->add_option("--out", out_dir, "output directory")->required();
    t->add_option("--seed", seed_flag, "root RNG seed (overrides config)");

    auto* e = app.add_subcommand("eval", "evaluate a checkpoint");
    e->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
    e->add_option("--data", data_root, "dataset dir with images/ and masks/")->required();
    e->add_option("--baseline-report", baseline_path, "JSON report to test against");
    e->add_option("--json", json_out, "also write the report as JSON");

    auto* p = app.add_subcommand("predict", "segment one image");
    p->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
    p->add_option("--image", image_path, "input image")->required();
    p->add_option("--out", out_dir, "output mask PNG")->required();
    p->add_option("--dump-intermediates", dump_dir, "dump feature-map PNGs here");

    auto* g = app.add_subcommand("gradcheck", "finite-difference verification");
    g->add_option("--module", module, "all|tensor|nn|cidm|dem|fam|model");
    g->add_option("--seed", gc_seed, "base seed");
    g->add_option("--seeds", gc_seeds, "number of seeds per suite");

    auto* s = app.add_subcommand("synth", "materialize a synthetic dataset");
    s->add_option("--spec", synth_spec, "synthetic spec string")->required();
    s->add_option("--out", out_dir, "output dataset directory")->required();

    auto* i = app.add_subcommand("info", "parameter and MAC accounting");
    i->add_option("--checkpoint", ckpt_path, "model checkpoint");
    i->add_option("--config", config_path, "key=value config file");
    i->add_option("--set", overrides, "override a config key (key=value)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int rc = app.exit(err);
        return rc == 0 ? 0 : kExitConfig;
    }

    try {
        if (t->parsed())
            return cmd_train(config_path, overrides, data_root, synth_spec, out_dir, seed_flag);
        if (e->parsed()) return cmd_eval(ckpt_path, data_root, baseline_path, json_out);
        if (p->parsed()) return cmd_predict(ckpt_path, image_path, out_dir, dump_dir);
        if (g->parsed()) return cmd_gradcheck(module, gc_seed, gc_seeds);
        if (s->parsed()) {
            write_dataset(gen_synthetic(parse_synth_spec(synth_spec)), out_dir);
            return 0;
        }
        if (i->parsed()) return cmd_info(ckpt_path, config_path, overrides);
    } catch (const ConfigError& ex) {
        std::cerr << "config error: " << ex.what() << "\n";
        return kExitConfig;
    } catch (const std::invalid_argument& ex) {
        std::cerr << "config error: " << ex.what() << "\n";
        return kExitConfig;
    } catch (const TrainError& ex) {
        std::cerr << "numeric divergence: " << ex.what() << " (epoch " << ex.epoch << ", batch "
                  << ex.batch << ")\n";
        return kExitDiverged;
    } catch (const DataError& ex) {
        std::cerr << "data error: " << ex.what() << "\n";
        return kExitData;
    } catch (const CheckpointError& ex) {
        std::cerr << "data error: " << ex.what() << "\n";
        return kExitData;
    } catch (const MetricsError& ex) {
        std::cerr << "data error: " << ex.what() << "\n";
        return kExitData;
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return kExitConfig;
    }
    return 0;
}
