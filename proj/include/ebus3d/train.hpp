#pragma once

// Training and evaluation drivers shared by the CLI and the test suites.
// Training streams slices one at a time with gradient accumulation and the
// cosine schedule sized to the run; evaluation produces slice- and
// lesion-level metrics, ROC curves and the per-slice score dump.

#include <iosfwd>
#include <string>

#include "ebus3d/config.hpp"
#include "ebus3d/dataset.hpp"
#include "ebus3d/metrics.hpp"
#include "ebus3d/optim.hpp"

namespace ebus3d {

// Loss went NaN/Inf; carries the optimizer step where it happened.
struct NumericalError : std::runtime_error {
    std::int64_t step;
    NumericalError(const std::string& msg, std::int64_t step_no)
        : std::runtime_error(msg), step(step_no) {}
};

struct RunConfig {
    Variant variant = Variant::U;
    double lr0 = 1e-4;
    int accumulation = 12;
    int epochs = 30;

    double p_flip = 0.2;
    double p_noise = 0.2;
    double noise_sigma = 0.01;
    double p_blur = 0.2;
    double blur_sigma_lo = 0.5;
    double blur_sigma_hi = 1.5;

    std::uint64_t seed = 1;          // base seed
    std::uint64_t data_seed = 0;     // 0 derives from the base seed
    std::uint64_t init_seed = 0;
    std::uint64_t augment_seed = 0;

    std::string data_dir;
    std::string checkpoint_dir;
    std::string metrics_dir;

    double eval_threshold = 0.5;          // fixed by the evaluation protocol
    double early_stop_lesion_acc = 0.0;   // 0 disables early stopping
    bool temporal_shuffle = false;        // frame-shuffle control runs

    std::uint64_t resolved_data_seed() const { return data_seed ? data_seed : seed; }
    std::uint64_t resolved_init_seed() const { return init_seed ? init_seed : seed + 0x9e3779b9ull; }
    std::uint64_t resolved_augment_seed() const {
        return augment_seed ? augment_seed : seed + 0x61756757ull;
    }
    AugmentConfig augment_config() const {
        return {p_flip, p_noise, noise_sigma, p_blur, blur_sigma_lo, blur_sigma_hi,
                resolved_augment_seed()};
    }
    void validate() const;
};

// Parses `key = value` text into a RunConfig, rejecting unknown keys.
RunConfig parse_run_config(const KeyValueConfig& kv);

// Every knob that affects the output, as `key = value` lines.
void echo_run_config(const RunConfig& cfg, std::ostream& os);

struct EpochStats {
    int epoch = 0;
    double mean_loss = 0.0;
    double val_slice_acc = 0.0;
    double val_lesion_acc = 0.0;
};

struct TrainResult {
    int epochs_run = 0;
    std::int64_t steps = 0;
    std::int64_t total_steps = 0;
    double best_lesion_acc = 0.0;
    int best_epoch = -1;
    std::string final_checkpoint;
    std::string best_checkpoint;
    std::vector<EpochStats> history;
};

TrainResult train_model(const RunConfig& cfg, std::ostream& log);

struct EvalOutput {
    std::string model;
    std::vector<SlicePrediction> slice_preds;
    std::vector<LesionPrediction> lesion_preds;
    MetricRow slice_row;
    MetricRow lesion_row;
    RocCurve slice_roc;
    RocCurve lesion_roc;
};

EvalOutput evaluate_model(EbusNet<float>& model, const SliceDataset& ds, const std::string& split,
                          bool temporal_shuffle = false, std::uint64_t shuffle_seed = 0);

// Loads the checkpoint (default full-size architecture for its variant
// tag) and evaluates the requested split of a preprocessed dataset.
EvalOutput evaluate_checkpoint(const std::string& checkpoint_path, const std::string& data_dir,
                               const std::string& split, bool temporal_shuffle = false,
                               std::uint64_t shuffle_seed = 0);

// metrics.csv, roc_slice.csv, roc_lesion.csv, slice_scores.csv,
// lesion_scores.csv under out_dir.
void write_eval_outputs(const EvalOutput& out, const std::string& out_dir);

}  // namespace ebus3d
