#include "ebus3d/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "ebus3d/parallel.hpp"

namespace fs = std::filesystem;

namespace ebus3d {

void write_slice_index(const SliceIndex& index, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open index for writing: " + path);
    os << "#ebus-index v1\n";
    char buf[32];
    for (const auto& l : index.lesions) {
        os << "lesion\t" << l.lesion_id << '\t' << l.patient_id << '\t' << l.split << '\t'
           << (l.label == 1 ? "malignant" : "benign") << '\t' << l.grayscale_slices << '\t'
           << l.doppler_slices << '\t' << l.elasto_picks << '\t'
           << (l.excluded_u ? "excluded_u" : "-") << '\n';
    }
    for (const auto& s : index.slices) {
        std::snprintf(buf, sizeof(buf), "%.6g", s.clip_start);
        os << "slice\t" << s.lesion_id << '\t' << s.patient_id << '\t' << s.split << '\t'
           << mode_name(s.mode) << '\t' << buf << '\t' << s.data_path << '\t' << s.meta_path
           << '\n';
    }
    for (const auto& e : index.elastos) {
        std::snprintf(buf, sizeof(buf), "%.6g", e.coverage);
        os << "elasto\t" << e.lesion_id << '\t' << e.patient_id << '\t' << e.split << '\t'
           << e.rank << '\t' << buf << '\t' << e.data_path << '\t' << e.meta_path << '\n';
    }
    if (!os) throw std::runtime_error("write failed for index: " + path);
}

SliceIndex read_slice_index(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open index: " + path);
    std::string header;
    std::getline(is, header);
    if (header != "#ebus-index v1")
        throw std::runtime_error("not an ebus index (bad header): " + path);

    SliceIndex index;
    index.root_dir = fs::path(path).parent_path().string();
    std::string line;
    int line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string kind;
        ls >> kind;
        bool ok = true;
        if (kind == "lesion") {
            LesionIndexEntry l;
            std::string label, flags;
            ok = static_cast<bool>(ls >> l.lesion_id >> l.patient_id >> l.split >> label >>
                                   l.grayscale_slices >> l.doppler_slices >> l.elasto_picks >>
                                   flags);
            if (ok) {
                l.label = label == "malignant" ? 1 : 0;
                l.excluded_u = flags == "excluded_u";
                index.lesions.push_back(std::move(l));
            }
        } else if (kind == "slice") {
            SliceIndexEntry s;
            std::string mode;
            ok = static_cast<bool>(ls >> s.lesion_id >> s.patient_id >> s.split >> mode >>
                                   s.clip_start >> s.data_path >> s.meta_path);
            if (ok) {
                s.mode = mode_from_name(mode);
                index.slices.push_back(std::move(s));
            }
        } else if (kind == "elasto") {
            ElastoIndexEntry e;
            ok = static_cast<bool>(ls >> e.lesion_id >> e.patient_id >> e.split >> e.rank >>
                                   e.coverage >> e.data_path >> e.meta_path);
            if (ok) index.elastos.push_back(std::move(e));
        } else {
            ok = false;
        }
        if (!ok)
            throw std::runtime_error("bad index line " + std::to_string(line_no) + " in " + path);
    }
    return index;
}

SliceIndex preprocess_dataset(const Manifest& manifest, const std::string& out_dir,
                              const PreprocOptions& opts) {
    std::error_code ec;
    fs::create_directories(fs::path(out_dir) / "slices", ec);
    fs::create_directories(fs::path(out_dir) / "elasto", ec);
    if (ec)
        throw std::runtime_error("cannot create output directory " + out_dir + ": " + ec.message());

    struct LesionWork {
        const PatientEntry* patient;
        const LesionEntry* lesion;
    };
    std::vector<LesionWork> work;
    for (const auto& p : manifest.patients)
        for (const auto& l : p.lesions) work.push_back({&p, &l});

    struct LesionOutput {
        LesionIndexEntry lesion;
        std::vector<SliceIndexEntry> slices;
        std::vector<ElastoIndexEntry> elastos;
    };
    std::vector<LesionOutput> outputs(work.size());

    parallel_for(static_cast<std::int64_t>(work.size()), [&](std::int64_t wi) {
        const auto& [patient, lesion] = work[static_cast<std::size_t>(wi)];
        LesionOutput out;
        out.lesion = {lesion->lesion_id, patient->patient_id, patient->split, lesion->label,
                      0,                 0,                   0,              false};

        auto maybe_crop = [&](Image img) {
            if (opts.crop_width > 0)
                return crop_image(img, opts.crop_x, opts.crop_y, opts.crop_width,
                                  opts.crop_height);
            return img;
        };

        // elastography first: slices need to know whether picks exist
        const SegmentEntry* elasto_seg = lesion->segment(Mode::elastography);
        std::vector<std::pair<std::string, std::string>> elasto_paths;
        if (elasto_seg) {
            VideoSegment seg = load_segment(manifest, *patient, *lesion, *elasto_seg);
            for (auto& f : seg.frames) f = maybe_crop(f);
            const auto picks =
                select_elastography_frames(seg, 3, opts.coverage_sat, opts.coverage_val);
            for (std::size_t r = 0; r < picks.size(); ++r) {
                char stem[64];
                std::snprintf(stem, sizeof(stem), "elasto/%s_%d", lesion->lesion_id.c_str(),
                              static_cast<int>(r));
                const std::string data = std::string(stem) + ".f32";
                const std::string meta = std::string(stem) + ".meta";
                write_elasto_files(seg.frames[static_cast<std::size_t>(picks[r].frame_index)],
                                   lesion->lesion_id, picks[r].coverage,
                                   (fs::path(out_dir) / data).string(),
                                   (fs::path(out_dir) / meta).string());
                out.elastos.push_back({lesion->lesion_id, patient->patient_id, patient->split,
                                       static_cast<int>(r), picks[r].coverage, data, meta});
                elasto_paths.emplace_back(data, meta);
            }
        }
        out.lesion.elasto_picks = static_cast<std::int64_t>(out.elastos.size());
        const bool has_elasto = !out.elastos.empty();

        for (Mode mode : {Mode::grayscale, Mode::doppler}) {
            const SegmentEntry* entry = lesion->segment(mode);
            if (!entry) continue;
            VideoSegment seg = load_segment(manifest, *patient, *lesion, *entry);
            for (auto& f : seg.frames) f = maybe_crop(f);
            const auto clips = segment_clips(seg.duration());
            int slice_no = 0;
            for (const auto& clip : clips) {
                Slice s = make_slice(seg, clip, has_elasto);
                char stem[64];
                std::snprintf(stem, sizeof(stem), "slices/%s_%c_%03d", lesion->lesion_id.c_str(),
                              mode == Mode::grayscale ? 'g' : 'd', slice_no);
                const std::string data = std::string(stem) + ".f32";
                const std::string meta = std::string(stem) + ".meta";
                write_slice_files(s, (fs::path(out_dir) / data).string(),
                                  (fs::path(out_dir) / meta).string());
                out.slices.push_back({lesion->lesion_id, patient->patient_id, patient->split, mode,
                                      clip.start, data, meta});
                ++slice_no;
            }
            if (mode == Mode::grayscale)
                out.lesion.grayscale_slices = static_cast<std::int64_t>(clips.size());
            else
                out.lesion.doppler_slices = static_cast<std::int64_t>(clips.size());
        }
        out.lesion.excluded_u = out.lesion.grayscale_slices == 0;
        outputs[static_cast<std::size_t>(wi)] = std::move(out);
    });

    SliceIndex index;
    index.root_dir = out_dir;
    for (auto& out : outputs) {
        index.lesions.push_back(out.lesion);
        for (auto& s : out.slices) index.slices.push_back(std::move(s));
        for (auto& e : out.elastos) index.elastos.push_back(std::move(e));
    }
    write_slice_index(index, (fs::path(out_dir) / "index.tsv").string());
    return index;
}

SliceDataset::SliceDataset(SliceIndex index) : index_(std::move(index)) {}

std::vector<SampleRef> SliceDataset::samples(const std::string& split, Variant variant) const {
    std::vector<SampleRef> out;
    std::map<std::string, int> per_lesion_counter;
    for (const auto& s : index_.slices) {
        if (s.split != split) continue;
        if (variant == Variant::U && s.mode != Mode::grayscale) continue;
        const LesionIndexEntry* lesion = index_.lesion(s.lesion_id);
        if (!lesion) throw std::runtime_error("index: slice references unknown lesion " + s.lesion_id);

        SampleRef ref;
        ref.slice = s;
        ref.label = lesion->label;
        ref.has_elasto = lesion->elasto_picks > 0;
        if (variant == Variant::UDE && ref.has_elasto) {
            // cycle through the lesion's picks so all of them get used
            std::vector<const ElastoIndexEntry*> picks;
            for (const auto& e : index_.elastos)
                if (e.lesion_id == s.lesion_id) picks.push_back(&e);
            const int k = per_lesion_counter[s.lesion_id]++;
            const auto* pick = picks[static_cast<std::size_t>(k) % picks.size()];
            ref.elasto_data = pick->data_path;
            ref.elasto_meta = pick->meta_path;
        }
        out.push_back(std::move(ref));
    }
    return out;
}

std::vector<LesionClipCounts> SliceDataset::clip_counts(const std::string& split) const {
    std::vector<LesionClipCounts> out;
    for (const auto& l : index_.lesions) {
        if (l.split != split) continue;
        out.push_back({l.lesion_id, l.grayscale_slices, l.doppler_slices});
    }
    return out;
}

int SliceDataset::lesion_label(const std::string& lesion_id) const {
    const LesionIndexEntry* l = index_.lesion(lesion_id);
    if (!l) throw std::runtime_error("unknown lesion id: " + lesion_id);
    return l->label;
}

namespace {

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace

LoadedSample SliceDataset::load(const SampleRef& ref, Variant variant,
                                const AugmentConfig* augment, std::uint64_t sample_index,
                                bool temporal_shuffle, std::uint64_t shuffle_seed) const {
    Slice s = read_slice_files((fs::path(index_.root_dir) / ref.slice.data_path).string(),
                               (fs::path(index_.root_dir) / ref.slice.meta_path).string());
    s.patient_id = ref.slice.patient_id;
    s.signal = build_graphic_signal(s.mode, ref.has_elasto);
    if (augment) s = augment_slice(s, *augment, sample_index);
    if (temporal_shuffle) {
        // destroys temporal order per slice, identically across runs
        Rng rng(shuffle_seed, fnv1a(ref.slice.data_path));
        std::shuffle(s.frames.begin(), s.frames.end(), rng.engine());
    }

    LoadedSample out;
    out.slice = slice_to_tensor(s);
    out.label = ref.label;
    out.lesion_id = s.lesion_id;
    out.patient_id = ref.slice.patient_id;
    out.mode = s.mode;
    if (variant != Variant::U) out.signal = signal_to_tensor(s.signal);
    if (variant == Variant::UDE && !ref.elasto_data.empty()) {
        Image img = read_elasto_files((fs::path(index_.root_dir) / ref.elasto_data).string(),
                                      (fs::path(index_.root_dir) / ref.elasto_meta).string());
        out.elasto = image_to_tensor(img);
    }
    return out;
}

}  // namespace ebus3d
