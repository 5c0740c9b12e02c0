#pragma once

// Deterministic conversion of mode-tagged lesion videos into model inputs:
// 6-second clips with 50% overlap, 4 Hz sampling into 24-frame slices,
// coverage-ranked elastography selection, graphic-signal vectors, and
// seeded train-time augmentation.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ebus3d/image.hpp"
#include "ebus3d/tensor.hpp"

namespace ebus3d {

enum class Mode { grayscale, doppler, elastography };

std::string mode_name(Mode m);
Mode mode_from_name(const std::string& s);

constexpr double kClipSeconds = 6.0;
constexpr double kClipOverlap = 0.5;
constexpr double kSampleRateHz = 4.0;
constexpr int kFramesPerSlice = 24;

struct VideoSegment {
    std::string lesion_id;
    std::string patient_id;
    Mode mode = Mode::grayscale;
    double fps = 0.0;
    std::vector<Image> frames;

    double duration() const { return static_cast<double>(frames.size()) / fps; }
};

struct ClipInterval {
    double start = 0.0;
    double length = kClipSeconds;
};

// Clips start every clip_len*(1-overlap) seconds; trailing partial windows
// are dropped, so durations under clip_len yield no clips at all.
std::vector<ClipInterval> segment_clips(double duration_seconds, double clip_len = kClipSeconds,
                                        double overlap = kClipOverlap);
std::int64_t clip_count(double duration_seconds, double clip_len = kClipSeconds,
                        double overlap = kClipOverlap);

// Nearest source frame for each of the 24 targets: floor(t*fps + 0.5).
// Throws when an index would run past frame_count (corrupt fps metadata).
std::vector<std::int64_t> sample_clip_indices(double clip_start, double fps,
                                              std::int64_t frame_count,
                                              int frames_per_slice = kFramesPerSlice,
                                              double rate_hz = kSampleRateHz);

// Fraction of chromatic pixels: saturation > 0.3 and value > 0.2 in HSV.
double coverage_area(const Image& img, double sat_threshold = 0.3, double val_threshold = 0.2);

struct ElastoPick {
    std::int64_t frame_index = 0;
    double coverage = 0.0;
};

// Up to max_picks frames with the largest coverage, ties broken by the
// earlier timestamp. Requires an elastography segment.
std::vector<ElastoPick> select_elastography_frames(const VideoSegment& seg, int max_picks = 3,
                                                   double sat_threshold = 0.3,
                                                   double val_threshold = 0.2);

// [is_grayscale, is_doppler, has_elastography]
struct GraphicSignal {
    std::array<float, 3> v{0.f, 0.f, 0.f};
    bool operator==(const GraphicSignal&) const = default;
};

GraphicSignal build_graphic_signal(Mode slice_mode, bool has_elastography);

struct Slice {
    std::string lesion_id;
    std::string patient_id;
    Mode mode = Mode::grayscale;
    double clip_start = 0.0;
    GraphicSignal signal;
    std::vector<Image> frames;  // exactly kFramesPerSlice
};

// Samples one clip out of a grayscale/doppler segment.
Slice make_slice(const VideoSegment& seg, const ClipInterval& clip, bool has_elastography);

struct AugmentConfig {
    double p_flip = 0.2;
    double p_noise = 0.2;
    double noise_sigma = 0.01;  // fraction of the [0,1] intensity range
    double p_blur = 0.2;
    double blur_sigma_lo = 0.5;
    double blur_sigma_hi = 1.5;
    std::uint64_t seed = 0;
};

// Pure function of (slice, config.seed, sample_index). Each enabled
// transform is applied identically to all 24 frames; noise is one field
// shared across the stack, clamped back to [0,1].
Slice augment_slice(const Slice& slice, const AugmentConfig& cfg, std::uint64_t sample_index);

// Model-facing conversions (grayscale frames already carry 3 equal channels).
Tensor<float> slice_to_tensor(const Slice& slice);        // [1,3,T,H,W]
Tensor<float> image_to_tensor(const Image& img);          // [1,3,H,W]
GraphicSignal signal_of(const Slice& s);
Tensor<float> signal_to_tensor(const GraphicSignal& g);   // [1,3]

// Slice files: raw little-endian f32 in C,T,H,W order plus a text sidecar
// carrying extents, mode, lesion id and clip start.
void write_slice_files(const Slice& slice, const std::string& data_path,
                       const std::string& meta_path);
Slice read_slice_files(const std::string& data_path, const std::string& meta_path);

// Elastography picks use the same raw-f32 container with C,H,W extents.
void write_elasto_files(const Image& img, const std::string& lesion_id, double coverage,
                        const std::string& data_path, const std::string& meta_path);
Image read_elasto_files(const std::string& data_path, const std::string& meta_path);

}  // namespace ebus3d
