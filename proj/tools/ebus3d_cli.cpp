// ebus3d — dataset synthesis, preprocessing, training and evaluation.
//
// Exit codes: 0 success, 2 usage/config error, 3 I/O error, 4 numerical
// failure during training.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "ebus3d/checkpoint.hpp"
#include "ebus3d/config.hpp"
#include "ebus3d/dataset.hpp"
#include "ebus3d/synth.hpp"
#include "ebus3d/train.hpp"

namespace fs = std::filesystem;
using namespace ebus3d;

namespace {

struct TeeBuf : std::streambuf {
    std::streambuf* a;
    std::streambuf* b;
    TeeBuf(std::streambuf* a_, std::streambuf* b_) : a(a_), b(b_) {}
    int overflow(int c) override {
        if (c != EOF) {
            a->sputc(static_cast<char>(c));
            b->sputc(static_cast<char>(c));
        }
        return c;
    }
    int sync() override {
        a->pubsync();
        b->pubsync();
        return 0;
    }
};

SynthConfig parse_synth_config(const KeyValueConfig& kv) {
    SynthConfig cfg;
    cfg.patients = static_cast<int>(kv.get_int("patients", cfg.patients));
    cfg.lesions_per_patient_min =
        static_cast<int>(kv.get_int("lesions_min", cfg.lesions_per_patient_min));
    cfg.lesions_per_patient_max =
        static_cast<int>(kv.get_int("lesions_max", cfg.lesions_per_patient_max));
    cfg.malignant_ratio = kv.get_double("malignant_ratio", cfg.malignant_ratio);
    cfg.fps = kv.get_double("fps", cfg.fps);
    cfg.duration_min = kv.get_double("duration_min", cfg.duration_min);
    cfg.duration_max = kv.get_double("duration_max", cfg.duration_max);
    cfg.elasto_seconds = kv.get_double("elasto_seconds", cfg.elasto_seconds);
    cfg.frame_width = static_cast<int>(kv.get_int("frame_width", cfg.frame_width));
    cfg.frame_height = static_cast<int>(kv.get_int("frame_height", cfg.frame_height));
    cfg.p_doppler = kv.get_double("p_doppler", cfg.p_doppler);
    cfg.p_elasto = kv.get_double("p_elasto", cfg.p_elasto);
    cfg.train_fraction = kv.get_double("train_fraction", cfg.train_fraction);
    cfg.seed = static_cast<std::uint64_t>(kv.get_int("seed", 1));
    const std::string sig = kv.get_string("class_signal", "texture_flicker");
    if (sig == "texture_flicker")
        cfg.signal = ClassSignal::texture_flicker;
    else if (sig == "temporal_only")
        cfg.signal = ClassSignal::temporal_only;
    else
        throw std::invalid_argument("synth config: unknown class_signal `" + sig + "`");
    cfg.out_dir = kv.get_string("out_dir", "");
    const auto unknown = kv.unread_keys();
    if (!unknown.empty())
        throw std::invalid_argument("synth config: unknown key `" + unknown.front() + "`");
    return cfg;
}

int cmd_synth(const std::string& config_path, std::int64_t seed_override,
              const std::string& out_override) {
    KeyValueConfig kv = KeyValueConfig::parse_file(config_path);
    SynthConfig cfg = parse_synth_config(kv);
    if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
    if (!out_override.empty()) cfg.out_dir = out_override;
    Manifest m = generate_dataset(cfg);
    std::printf("wrote %lld lesions under %s\n", static_cast<long long>(m.lesion_count()),
                cfg.out_dir.c_str());
    std::printf("manifest: %s\n", (fs::path(cfg.out_dir) / "manifest.tsv").string().c_str());
    return 0;
}

int cmd_preprocess(const std::string& manifest_path, const std::string& out_dir,
                   const std::string& config_path) {
    PreprocOptions opts;
    if (!config_path.empty()) {
        KeyValueConfig kv = KeyValueConfig::parse_file(config_path);
        opts.crop_x = static_cast<int>(kv.get_int("crop_x", 0));
        opts.crop_y = static_cast<int>(kv.get_int("crop_y", 0));
        opts.crop_width = static_cast<int>(kv.get_int("crop_width", 0));
        opts.crop_height = static_cast<int>(kv.get_int("crop_height", 0));
        opts.coverage_sat = kv.get_double("coverage_sat", opts.coverage_sat);
        opts.coverage_val = kv.get_double("coverage_val", opts.coverage_val);
        const auto unknown = kv.unread_keys();
        if (!unknown.empty())
            throw std::invalid_argument("preprocess config: unknown key `" + unknown.front() + "`");
    }
    Manifest m = read_manifest(manifest_path);
    SliceIndex index = preprocess_dataset(m, out_dir, opts);
    std::printf("wrote %zu slices, %zu elastography picks for %zu lesions\n", index.slices.size(),
                index.elastos.size(), index.lesions.size());
    std::printf("index: %s\n", (fs::path(out_dir) / "index.tsv").string().c_str());
    return 0;
}

int cmd_train(const std::string& config_path, std::int64_t seed_override,
              const std::string& out_override) {
    KeyValueConfig kv = KeyValueConfig::parse_file(config_path);
    RunConfig cfg = parse_run_config(kv);
    if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
    if (!out_override.empty()) cfg.checkpoint_dir = out_override;
    if (cfg.checkpoint_dir.empty())
        throw std::invalid_argument("run config: checkpoint_dir not set (use --out)");

    fs::create_directories(cfg.checkpoint_dir);
    std::ofstream log_file(fs::path(cfg.checkpoint_dir) / "run.log", std::ios::trunc);
    if (!log_file) throw std::runtime_error("cannot open run.log in " + cfg.checkpoint_dir);
    TeeBuf tee(log_file.rdbuf(), std::cout.rdbuf());
    std::ostream log(&tee);

    TrainResult r = train_model(cfg, log);
    log << "final checkpoint: " << r.final_checkpoint << "\n";
    log << "best checkpoint: " << r.best_checkpoint << " (epoch " << r.best_epoch
        << ", lesion acc " << r.best_lesion_acc << ")\n";
    log.flush();
    return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& data_dir,
             const std::string& split, const std::string& out_dir, const std::string& variant,
             bool temporal_shuffle, std::int64_t shuffle_seed) {
    if (!variant.empty()) {
        Checkpoint ckpt = read_checkpoint(checkpoint_path);
        if (variant_from_tag(ckpt.variant_tag) != variant_from_name(variant))
            throw std::invalid_argument(
                "checkpoint variant " + variant_name(variant_from_tag(ckpt.variant_tag)) +
                " does not match requested " + variant);
    }
    EvalOutput out = evaluate_checkpoint(checkpoint_path, data_dir, split, temporal_shuffle,
                                         shuffle_seed < 0 ? 0 : static_cast<std::uint64_t>(shuffle_seed));
    if (!out_dir.empty()) write_eval_outputs(out, out_dir);

    std::printf("%-8s %-10s %-9s %-8s %s\n", "level", "model", "accuracy", "auc", "n");
    for (const auto& r : {out.slice_row, out.lesion_row})
        std::printf("%-8s %-10s %-9.4f %-8.4f %lld\n", r.level.c_str(), r.model.c_str(),
                    r.accuracy, r.auc, static_cast<long long>(r.n));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"EBUS video classification toolkit"};
    app.require_subcommand(1);

    std::string config_path, manifest_path, out_dir, data_dir, checkpoint_path;
    std::string split = "validation", variant;
    std::int64_t seed_override = -1, shuffle_seed = -1;
    bool temporal_shuffle = false;

    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    synth->add_option("--config", config_path, "key = value config file")->required();
    synth->add_option("--seed", seed_override, "override the dataset seed");
    synth->add_option("--out", out_dir, "override the output directory");

    auto* preprocess = app.add_subcommand("preprocess", "cut videos into model-ready slices");
    preprocess->add_option("--manifest", manifest_path, "dataset manifest.tsv")->required();
    preprocess->add_option("--out", out_dir, "output directory")->required();
    preprocess->add_option("--config", config_path, "crop/threshold options");

    auto* train = app.add_subcommand("train", "train a model variant");
    train->add_option("--config", config_path, "run config file")->required();
    train->add_option("--seed", seed_override, "override the base seed");
    train->add_option("--out", out_dir, "override the checkpoint directory");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    eval->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
    eval->add_option("--data", data_dir, "preprocessed dataset directory")->required();
    eval->add_option("--split", split, "train or validation (default validation)");
    eval->add_option("--out", out_dir, "metrics output directory");
    eval->add_option("--model", variant, "expected variant (U/UD/UDE), checked against the tag");
    eval->add_flag("--temporal-shuffle", temporal_shuffle, "destroy frame order (control runs)");
    eval->add_option("--shuffle-seed", shuffle_seed, "seed for the frame-shuffle control");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (synth->parsed()) return cmd_synth(config_path, seed_override, out_dir);
        if (preprocess->parsed()) return cmd_preprocess(manifest_path, out_dir, config_path);
        if (train->parsed()) return cmd_train(config_path, seed_override, out_dir);
        if (eval->parsed())
            return cmd_eval(checkpoint_path, data_dir, split, out_dir, variant, temporal_shuffle,
                            shuffle_seed);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    } catch (const CheckpointError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
    return 0;
}
