#include "ebus3d/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>

#include "ebus3d/checkpoint.hpp"

namespace fs = std::filesystem;

namespace ebus3d {

void RunConfig::validate() const {
    if (lr0 <= 0) throw std::invalid_argument("run config: lr0 must be positive");
    if (accumulation < 1) throw std::invalid_argument("run config: accumulation must be >= 1");
    if (epochs < 1) throw std::invalid_argument("run config: epochs must be >= 1");
    for (double p : {p_flip, p_noise, p_blur}) {
        if (p < 0 || p > 1)
            throw std::invalid_argument("run config: augmentation probabilities must lie in [0,1]");
    }
    if (eval_threshold != 0.5)
        throw std::invalid_argument(
            "run config: eval_threshold is fixed at 0.5 by the evaluation protocol");
    if (early_stop_lesion_acc < 0 || early_stop_lesion_acc > 1)
        throw std::invalid_argument("run config: early_stop_lesion_acc must lie in [0,1]");
    if (data_dir.empty()) throw std::invalid_argument("run config: data_dir not set");
}

RunConfig parse_run_config(const KeyValueConfig& kv) {
    RunConfig cfg;
    cfg.variant = variant_from_name(kv.get_string("variant", "U"));
    cfg.lr0 = kv.get_double("lr0", cfg.lr0);
    cfg.accumulation = static_cast<int>(kv.get_int("accumulation", cfg.accumulation));
    cfg.epochs = static_cast<int>(kv.get_int("epochs", cfg.epochs));
    cfg.p_flip = kv.get_double("p_flip", cfg.p_flip);
    cfg.p_noise = kv.get_double("p_noise", cfg.p_noise);
    cfg.noise_sigma = kv.get_double("noise_sigma", cfg.noise_sigma);
    cfg.p_blur = kv.get_double("p_blur", cfg.p_blur);
    cfg.blur_sigma_lo = kv.get_double("blur_sigma_lo", cfg.blur_sigma_lo);
    cfg.blur_sigma_hi = kv.get_double("blur_sigma_hi", cfg.blur_sigma_hi);
    cfg.seed = static_cast<std::uint64_t>(kv.get_int("seed", 1));
    cfg.data_seed = static_cast<std::uint64_t>(kv.get_int("data_seed", 0));
    cfg.init_seed = static_cast<std::uint64_t>(kv.get_int("init_seed", 0));
    cfg.augment_seed = static_cast<std::uint64_t>(kv.get_int("augment_seed", 0));
    cfg.data_dir = kv.get_string("data_dir", "");
    cfg.checkpoint_dir = kv.get_string("checkpoint_dir", "");
    cfg.metrics_dir = kv.get_string("metrics_dir", "");
    cfg.eval_threshold = kv.get_double("eval_threshold", cfg.eval_threshold);
    cfg.early_stop_lesion_acc = kv.get_double("early_stop_lesion_acc", cfg.early_stop_lesion_acc);
    cfg.temporal_shuffle = kv.get_bool("temporal_shuffle", cfg.temporal_shuffle);

    const auto unknown = kv.unread_keys();
    if (!unknown.empty())
        throw std::invalid_argument("run config: unknown key `" + unknown.front() + "`");
    return cfg;
}

void echo_run_config(const RunConfig& cfg, std::ostream& os) {
    char buf[64];
    auto num = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.8g", v);
        return std::string(buf);
    };
    os << "config variant = " << variant_name(cfg.variant) << "\n";
    os << "config lr0 = " << num(cfg.lr0) << "\n";
    os << "config accumulation = " << cfg.accumulation << "\n";
    os << "config epochs = " << cfg.epochs << "\n";
    os << "config p_flip = " << num(cfg.p_flip) << "\n";
    os << "config p_noise = " << num(cfg.p_noise) << "\n";
    os << "config noise_sigma = " << num(cfg.noise_sigma) << "\n";
    os << "config p_blur = " << num(cfg.p_blur) << "\n";
    os << "config blur_sigma_lo = " << num(cfg.blur_sigma_lo) << "\n";
    os << "config blur_sigma_hi = " << num(cfg.blur_sigma_hi) << "\n";
    os << "config seed = " << cfg.seed << "\n";
    os << "config data_seed = " << cfg.resolved_data_seed() << "\n";
    os << "config init_seed = " << cfg.resolved_init_seed() << "\n";
    os << "config augment_seed = " << cfg.resolved_augment_seed() << "\n";
    os << "config data_dir = " << cfg.data_dir << "\n";
    os << "config checkpoint_dir = " << cfg.checkpoint_dir << "\n";
    os << "config metrics_dir = " << cfg.metrics_dir << "\n";
    os << "config eval_threshold = " << num(cfg.eval_threshold) << "\n";
    os << "config early_stop_lesion_acc = " << num(cfg.early_stop_lesion_acc) << "\n";
    os << "config temporal_shuffle = " << (cfg.temporal_shuffle ? "true" : "false") << "\n";
}

namespace {

struct ValStats {
    double slice_acc = 0.0;
    double lesion_acc = 0.0;
    std::int64_t n_slices = 0;
};

ValStats validate_split(EbusNet<float>& model, const SliceDataset& ds, const std::string& split,
                        const RunConfig& cfg) {
    const auto samples = ds.samples(split, cfg.variant);
    if (samples.empty()) return {};
    NoGradGuard ng;
    std::vector<SlicePrediction> preds;
    preds.reserve(samples.size());
    for (const auto& ref : samples) {
        auto sample = ds.load(ref, cfg.variant, nullptr, 0, cfg.temporal_shuffle,
                              cfg.resolved_data_seed());
        auto score = model.forward(sample.slice, sample.elasto, sample.signal, NetMode::eval);
        preds.push_back({sample.lesion_id, sample.patient_id,
                         static_cast<double>(score.item()), sample.label});
    }
    ValStats st;
    st.n_slices = static_cast<std::int64_t>(preds.size());
    st.slice_acc = accuracy(preds);
    st.lesion_acc = accuracy(aggregate_by_lesion(preds));
    return st;
}

}  // namespace

TrainResult train_model(const RunConfig& cfg, std::ostream& log) {
    cfg.validate();
    if (cfg.checkpoint_dir.empty())
        throw std::invalid_argument("run config: checkpoint_dir not set");
    fs::create_directories(cfg.checkpoint_dir);

    SliceDataset ds(read_slice_index((fs::path(cfg.data_dir) / "index.tsv").string()));
    const auto train_samples = ds.samples("train", cfg.variant);
    const std::int64_t n = static_cast<std::int64_t>(train_samples.size());
    if (n == 0) throw std::invalid_argument("training split has no usable slices for " +
                                            variant_name(cfg.variant));

    const std::int64_t steps_per_epoch = (n + cfg.accumulation - 1) / cfg.accumulation;
    const std::int64_t total_steps = static_cast<std::int64_t>(cfg.epochs) * steps_per_epoch;

    echo_run_config(cfg, log);
    log << "config n_train_slices = " << n << "\n";
    log << "config total_steps = " << total_steps << "\n";

    auto model = EbusNet<float>::init(cfg.variant, NetConfig{}, cfg.resolved_init_seed());
    SgdConfig opt_cfg;
    opt_cfg.schedule = {cfg.lr0, total_steps, 0};
    opt_cfg.accumulation = cfg.accumulation;
    SgdOptimizer<float> opt(model.parameters(), opt_cfg);

    const AugmentConfig augment = cfg.augment_config();
    const std::string final_path = (fs::path(cfg.checkpoint_dir) / "final.ckpt").string();
    const std::string best_path = (fs::path(cfg.checkpoint_dir) / "best.ckpt").string();

    TrainResult result;
    result.total_steps = total_steps;
    char line[192];

    double window_loss = 0.0;
    int window_count = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::int64_t> order(static_cast<std::size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
        Rng shuffle_rng(cfg.resolved_data_seed(), static_cast<std::uint64_t>(epoch));
        std::shuffle(order.begin(), order.end(), shuffle_rng.engine());

        double epoch_loss = 0.0;
        for (std::int64_t pos = 0; pos < n; ++pos) {
            const auto& ref = train_samples[static_cast<std::size_t>(order[static_cast<std::size_t>(pos)])];
            const std::uint64_t sample_index =
                static_cast<std::uint64_t>(epoch) * static_cast<std::uint64_t>(n) +
                static_cast<std::uint64_t>(pos);
            auto sample = ds.load(ref, cfg.variant, &augment, sample_index, cfg.temporal_shuffle,
                                  cfg.resolved_data_seed());
            auto score = model.forward(sample.slice, sample.elasto, sample.signal, NetMode::train);
            auto loss = bce_loss(score, static_cast<float>(sample.label));
            const double loss_v = static_cast<double>(loss.item());
            if (!std::isfinite(loss_v))
                throw NumericalError("training loss is not finite at optimizer step " +
                                         std::to_string(opt.steps_taken()),
                                     opt.steps_taken());
            backward(loss);
            epoch_loss += loss_v;
            window_loss += loss_v;
            ++window_count;
            const double lr_used = opt.current_lr();
            if (opt.accumulate()) {
                std::snprintf(line, sizeof(line), "step %lld lr %.8g loss %.6f\n",
                              static_cast<long long>(opt.steps_taken() - 1), lr_used,
                              window_loss / window_count);
                log << line;
                window_loss = 0.0;
                window_count = 0;
            }
        }
        {
            const double lr_used = opt.current_lr();
            if (opt.flush()) {
                std::snprintf(line, sizeof(line), "step %lld lr %.8g loss %.6f\n",
                              static_cast<long long>(opt.steps_taken() - 1), lr_used,
                              window_loss / std::max(1, window_count));
                log << line;
                window_loss = 0.0;
                window_count = 0;
            }
        }

        const ValStats val = validate_split(model, ds, "validation", cfg);
        EpochStats es{epoch, epoch_loss / static_cast<double>(n), val.slice_acc, val.lesion_acc};
        result.history.push_back(es);
        std::snprintf(line, sizeof(line),
                      "epoch %d loss %.6f val_slice_acc %.4f val_lesion_acc %.4f\n", epoch,
                      es.mean_loss, es.val_slice_acc, es.val_lesion_acc);
        log << line;
        result.epochs_run = epoch + 1;

        if (val.n_slices > 0 && val.lesion_acc > result.best_lesion_acc) {
            result.best_lesion_acc = val.lesion_acc;
            result.best_epoch = epoch;
            save_checkpoint(model, best_path, static_cast<std::uint64_t>(opt.steps_taken()),
                            static_cast<std::uint64_t>(total_steps), cfg.seed);
            result.best_checkpoint = best_path;
        }
        if (cfg.early_stop_lesion_acc > 0 && val.n_slices > 0 &&
            val.lesion_acc >= cfg.early_stop_lesion_acc) {
            log << "early stop: validation lesion accuracy reached target\n";
            break;
        }
    }

    save_checkpoint(model, final_path, static_cast<std::uint64_t>(opt.steps_taken()),
                    static_cast<std::uint64_t>(total_steps), cfg.seed);
    result.final_checkpoint = final_path;
    if (result.best_checkpoint.empty()) {
        // no validation data: final doubles as best
        save_checkpoint(model, best_path, static_cast<std::uint64_t>(opt.steps_taken()),
                        static_cast<std::uint64_t>(total_steps), cfg.seed);
        result.best_checkpoint = best_path;
    }
    result.steps = opt.steps_taken();
    return result;
}

EvalOutput evaluate_model(EbusNet<float>& model, const SliceDataset& ds, const std::string& split,
                          bool temporal_shuffle, std::uint64_t shuffle_seed) {
    const auto samples = ds.samples(split, model.variant);
    if (samples.empty())
        throw std::invalid_argument("evaluation split `" + split + "` has no usable slices for " +
                                    variant_name(model.variant));

    EvalOutput out;
    out.model = variant_name(model.variant);
    NoGradGuard ng;
    for (const auto& ref : samples) {
        auto sample = ds.load(ref, model.variant, nullptr, 0, temporal_shuffle, shuffle_seed);
        auto score = model.forward(sample.slice, sample.elasto, sample.signal, NetMode::eval);
        out.slice_preds.push_back({sample.lesion_id, sample.patient_id,
                                   static_cast<double>(score.item()), sample.label});
    }
    out.lesion_preds = aggregate_by_lesion(out.slice_preds);

    // the exclusion rule must agree with the lesions that produced slices
    const auto kept = apply_exclusions(ds.clip_counts(split), model.variant);
    if (kept.size() != out.lesion_preds.size())
        throw std::runtime_error("evaluation: exclusion rule kept " + std::to_string(kept.size()) +
                                 " lesions but " + std::to_string(out.lesion_preds.size()) +
                                 " produced slices");

    std::vector<double> s_scores, l_scores;
    std::vector<int> s_labels, l_labels;
    for (const auto& p : out.slice_preds) {
        s_scores.push_back(p.score);
        s_labels.push_back(p.label);
    }
    for (const auto& p : out.lesion_preds) {
        l_scores.push_back(p.mean_score);
        l_labels.push_back(p.label);
    }
    out.slice_roc = roc_curve(s_scores, s_labels);
    out.lesion_roc = roc_curve(l_scores, l_labels);
    out.slice_row = {"slice", out.model, accuracy(out.slice_preds), out.slice_roc.auc,
                     static_cast<std::int64_t>(out.slice_preds.size())};
    out.lesion_row = {"lesion", out.model, accuracy(out.lesion_preds), out.lesion_roc.auc,
                      static_cast<std::int64_t>(out.lesion_preds.size())};
    return out;
}

EvalOutput evaluate_checkpoint(const std::string& checkpoint_path, const std::string& data_dir,
                               const std::string& split, bool temporal_shuffle,
                               std::uint64_t shuffle_seed) {
    Checkpoint ckpt = read_checkpoint(checkpoint_path);
    auto model = EbusNet<float>::init(variant_from_tag(ckpt.variant_tag), NetConfig{}, 0);
    load_state(model, ckpt);
    SliceDataset ds(read_slice_index((fs::path(data_dir) / "index.tsv").string()));
    return evaluate_model(model, ds, split, temporal_shuffle, shuffle_seed);
}

void write_eval_outputs(const EvalOutput& out, const std::string& out_dir) {
    fs::create_directories(out_dir);
    write_metrics_csv((fs::path(out_dir) / "metrics.csv").string(),
                      {out.slice_row, out.lesion_row});
    write_roc_csv((fs::path(out_dir) / "roc_slice.csv").string(), out.slice_roc);
    write_roc_csv((fs::path(out_dir) / "roc_lesion.csv").string(), out.lesion_roc);

    char buf[192];
    {
        std::ofstream os(fs::path(out_dir) / "slice_scores.csv", std::ios::trunc);
        if (!os) throw std::runtime_error("cannot write slice_scores.csv in " + out_dir);
        os << "lesion_id,score,label\n";
        for (const auto& p : out.slice_preds) {
            std::snprintf(buf, sizeof(buf), "%s,%.9f,%d\n", p.lesion_id.c_str(), p.score, p.label);
            os << buf;
        }
    }
    {
        std::ofstream os(fs::path(out_dir) / "lesion_scores.csv", std::ios::trunc);
        if (!os) throw std::runtime_error("cannot write lesion_scores.csv in " + out_dir);
        os << "lesion_id,mean_score,slice_count,label\n";
        for (const auto& p : out.lesion_preds) {
            std::snprintf(buf, sizeof(buf), "%s,%.9f,%lld,%d\n", p.lesion_id.c_str(), p.mean_score,
                          static_cast<long long>(p.slice_count), p.label);
            os << buf;
        }
    }
}

}  // namespace ebus3d
