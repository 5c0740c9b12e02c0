#pragma once

// Preprocessed-dataset layout: a directory with `index.tsv` plus raw-f32
// slice and elastography files. The index carries one `lesion` row per
// lesion (with per-mode clip counts and exclusion flags) and one row per
// stored slice or elastography pick.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ebus3d/metrics.hpp"
#include "ebus3d/preproc.hpp"
#include "ebus3d/synth.hpp"

namespace ebus3d {

struct SliceIndexEntry {
    std::string lesion_id;
    std::string patient_id;
    std::string split;
    Mode mode = Mode::grayscale;
    double clip_start = 0.0;
    std::string data_path;  // relative to the dataset root
    std::string meta_path;
};

struct ElastoIndexEntry {
    std::string lesion_id;
    std::string patient_id;
    std::string split;
    int rank = 0;
    double coverage = 0.0;
    std::string data_path;
    std::string meta_path;
};

struct LesionIndexEntry {
    std::string lesion_id;
    std::string patient_id;
    std::string split;
    int label = 0;
    std::int64_t grayscale_slices = 0;
    std::int64_t doppler_slices = 0;
    std::int64_t elasto_picks = 0;
    bool excluded_u = false;  // no grayscale clip could be cut
};

struct SliceIndex {
    std::string root_dir;
    std::vector<LesionIndexEntry> lesions;
    std::vector<SliceIndexEntry> slices;
    std::vector<ElastoIndexEntry> elastos;

    const LesionIndexEntry* lesion(const std::string& id) const {
        for (const auto& l : lesions)
            if (l.lesion_id == id) return &l;
        return nullptr;
    }
};

void write_slice_index(const SliceIndex& index, const std::string& path);
SliceIndex read_slice_index(const std::string& path);

struct PreprocOptions {
    // crop window applied to every raw frame; disabled when width is 0
    int crop_x = 0;
    int crop_y = 0;
    int crop_width = 0;
    int crop_height = 0;
    double coverage_sat = 0.3;
    double coverage_val = 0.2;
};

// Runs the full pipeline over a manifest: clip segmentation, 4 Hz sampling,
// slice stacking, elastography selection. Deterministic; lesions may be
// processed in parallel.
SliceIndex preprocess_dataset(const Manifest& manifest, const std::string& out_dir,
                              const PreprocOptions& opts = {});

// One model-ready sample: a slice plus its lesion context.
struct SampleRef {
    SliceIndexEntry slice;
    int label = 0;
    bool has_elasto = false;
    std::string elasto_data;  // chosen pick for this slice (empty when none)
    std::string elasto_meta;
};

struct LoadedSample {
    Tensor<float> slice;                  // [1,3,T,H,W]
    std::optional<Tensor<float>> elasto;  // [1,3,H,W], UDE only
    std::optional<Tensor<float>> signal;  // [1,3], UD/UDE
    int label = 0;
    std::string lesion_id;
    std::string patient_id;
    Mode mode = Mode::grayscale;
};

class SliceDataset {
public:
    explicit SliceDataset(SliceIndex index);

    // Slices a variant consumes in one split: U sees grayscale only,
    // UD/UDE see grayscale and Doppler. Slices within a lesion cycle
    // through the lesion's elastography picks.
    std::vector<SampleRef> samples(const std::string& split, Variant variant) const;

    // Lesion clip availability for the exclusion rule.
    std::vector<LesionClipCounts> clip_counts(const std::string& split) const;
    int lesion_label(const std::string& lesion_id) const;

    // Loads tensors; augmentation (train only) and the frame-shuffle
    // control are pure functions of their seeds and the sample identity.
    LoadedSample load(const SampleRef& ref, Variant variant,
                      const AugmentConfig* augment = nullptr, std::uint64_t sample_index = 0,
                      bool temporal_shuffle = false, std::uint64_t shuffle_seed = 0) const;

    const SliceIndex& index() const { return index_; }

private:
    SliceIndex index_;
};

}  // namespace ebus3d
