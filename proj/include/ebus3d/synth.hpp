#pragma once

// Seeded generator of EBUS-like labeled lesion videos. Benign lesions are
// smooth low-variance blobs with stable motion; malignant lesions carry
// high-variance texture and temporal flicker. Doppler segments add
// chromatic patches, elastography segments add large chromatic overlays.
// The class signal is decodable from texture statistics by construction.
//
// The alternative temporal_only signal makes single frames uninformative:
// both classes draw per-frame blob brightness from the same multiset and
// differ only in its ordering (smooth vs alternating), so only a model
// that sees the time axis can separate them.

#include <cstdint>
#include <string>
#include <vector>

#include "ebus3d/preproc.hpp"

namespace ebus3d {

enum class ClassSignal { texture_flicker, temporal_only };

struct SynthConfig {
    int patients = 20;
    int lesions_per_patient_min = 2;
    int lesions_per_patient_max = 2;
    double malignant_ratio = 0.5;  // fraction of lesions labeled malignant
    double fps = 4.0;
    double duration_min = 6.0;  // grayscale/doppler segment length, seconds
    double duration_max = 9.0;
    double elasto_seconds = 3.0;
    int frame_width = 704;
    int frame_height = 576;
    double p_doppler = 0.7;  // probability a lesion has a Doppler segment
    double p_elasto = 0.6;   // probability a lesion has an elastography segment
    double train_fraction = 0.7;
    std::uint64_t seed = 1;
    ClassSignal signal = ClassSignal::texture_flicker;
    std::string out_dir;

    void validate() const;
};

struct SegmentEntry {
    Mode mode = Mode::grayscale;
    double fps = 0.0;
    std::int64_t n_frames = 0;
    std::string rel_path;  // directory holding frame_%06d.ppm
};

struct LesionEntry {
    std::string lesion_id;
    int label = 0;  // 0 benign, 1 malignant
    std::vector<SegmentEntry> segments;

    const SegmentEntry* segment(Mode m) const {
        for (const auto& s : segments)
            if (s.mode == m) return &s;
        return nullptr;
    }
};

struct PatientEntry {
    std::string patient_id;
    std::string split;  // "train" or "validation"
    std::vector<LesionEntry> lesions;
};

struct Manifest {
    std::vector<PatientEntry> patients;
    std::string root_dir;  // directory containing manifest.tsv

    std::int64_t lesion_count() const {
        std::int64_t n = 0;
        for (const auto& p : patients) n += static_cast<std::int64_t>(p.lesions.size());
        return n;
    }
};

// `manifest.tsv`: header line `#ebus-synth v1`, then one tab-separated row
// per segment: patient_id, split, lesion_id, label, mode, fps, n_frames,
// rel_path.
void write_manifest(const Manifest& m, const std::string& path);
Manifest read_manifest(const std::string& path);

// Renders every lesion's segments under cfg.out_dir and writes the
// manifest; returns it. Byte-deterministic for a fixed config.
Manifest generate_dataset(const SynthConfig& cfg);

// Deterministic patient-level split; no patient lands in both sets, and
// both sets get both classes whenever the patient pool allows it.
void split_by_patient(Manifest& m, double train_fraction, std::uint64_t seed);

// Manifest invariant check; returns human-readable violations (empty means
// the dataset is sound).
std::vector<std::string> validate_manifest(const std::string& manifest_path);

// Loads one segment's frames from disk.
VideoSegment load_segment(const Manifest& m, const PatientEntry& patient,
                          const LesionEntry& lesion, const SegmentEntry& seg);

}  // namespace ebus3d
