#include "ebus3d/preproc.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ebus3d {

std::string mode_name(Mode m) {
    switch (m) {
        case Mode::grayscale: return "grayscale";
        case Mode::doppler: return "doppler";
        case Mode::elastography: return "elastography";
    }
    return "?";
}

Mode mode_from_name(const std::string& s) {
    if (s == "grayscale") return Mode::grayscale;
    if (s == "doppler") return Mode::doppler;
    if (s == "elastography") return Mode::elastography;
    throw std::invalid_argument("unknown imaging mode: " + s);
}

std::int64_t clip_count(double duration_seconds, double clip_len, double overlap) {
    const double step = clip_len * (1.0 - overlap);
    // guard against duration arithmetic landing epsilon under a boundary
    if (duration_seconds + 1e-9 < clip_len) return 0;
    return static_cast<std::int64_t>(std::floor((duration_seconds - clip_len + 1e-9) / step)) + 1;
}

std::vector<ClipInterval> segment_clips(double duration_seconds, double clip_len, double overlap) {
    const double step = clip_len * (1.0 - overlap);
    const std::int64_t n = clip_count(duration_seconds, clip_len, overlap);
    std::vector<ClipInterval> clips;
    clips.reserve(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) clips.push_back({static_cast<double>(i) * step, clip_len});
    return clips;
}

std::vector<std::int64_t> sample_clip_indices(double clip_start, double fps,
                                              std::int64_t frame_count, int frames_per_slice,
                                              double rate_hz) {
    std::vector<std::int64_t> idx;
    idx.reserve(static_cast<std::size_t>(frames_per_slice));
    for (int k = 0; k < frames_per_slice; ++k) {
        const double t = clip_start + static_cast<double>(k) / rate_hz;
        const std::int64_t i = static_cast<std::int64_t>(std::floor(t * fps + 0.5));
        if (i < 0 || i >= frame_count) {
            throw std::out_of_range("sample index " + std::to_string(i) + " for t=" +
                                    std::to_string(t) + "s is outside the segment (" +
                                    std::to_string(frame_count) + " frames at " +
                                    std::to_string(fps) + " fps)");
        }
        idx.push_back(i);
    }
    return idx;
}

double coverage_area(const Image& img, double sat_threshold, double val_threshold) {
    if (img.pixel_count() == 0) return 0.0;
    std::size_t chromatic = 0;
    for (std::size_t p = 0; p < img.pixel_count(); ++p) {
        float sat, val;
        sat_val(img.px[p * 3], img.px[p * 3 + 1], img.px[p * 3 + 2], sat, val);
        if (sat > sat_threshold && val > val_threshold) ++chromatic;
    }
    return static_cast<double>(chromatic) / static_cast<double>(img.pixel_count());
}

std::vector<ElastoPick> select_elastography_frames(const VideoSegment& seg, int max_picks,
                                                   double sat_threshold, double val_threshold) {
    if (seg.mode != Mode::elastography)
        throw std::invalid_argument("select_elastography_frames: segment mode is " +
                                    mode_name(seg.mode) + ", expected elastography");
    std::vector<ElastoPick> picks;
    picks.reserve(seg.frames.size());
    for (std::size_t i = 0; i < seg.frames.size(); ++i)
        picks.push_back({static_cast<std::int64_t>(i),
                         coverage_area(seg.frames[i], sat_threshold, val_threshold)});
    // stable sort keeps the earlier frame first among equal coverages
    std::stable_sort(picks.begin(), picks.end(),
                     [](const ElastoPick& a, const ElastoPick& b) { return a.coverage > b.coverage; });
    if (static_cast<int>(picks.size()) > max_picks) picks.resize(static_cast<std::size_t>(max_picks));
    return picks;
}

GraphicSignal build_graphic_signal(Mode slice_mode, bool has_elastography) {
    if (slice_mode == Mode::elastography)
        throw std::invalid_argument(
            "build_graphic_signal: elastography is a 2D input, not a slice mode");
    GraphicSignal g;
    g.v[0] = slice_mode == Mode::grayscale ? 1.f : 0.f;
    g.v[1] = slice_mode == Mode::doppler ? 1.f : 0.f;
    g.v[2] = has_elastography ? 1.f : 0.f;
    return g;
}

Slice make_slice(const VideoSegment& seg, const ClipInterval& clip, bool has_elastography) {
    if (seg.mode == Mode::elastography)
        throw std::invalid_argument("make_slice: elastography segments are not sliced");
    Slice s;
    s.lesion_id = seg.lesion_id;
    s.patient_id = seg.patient_id;
    s.mode = seg.mode;
    s.clip_start = clip.start;
    s.signal = build_graphic_signal(seg.mode, has_elastography);
    const auto idx =
        sample_clip_indices(clip.start, seg.fps, static_cast<std::int64_t>(seg.frames.size()));
    s.frames.reserve(idx.size());
    for (auto i : idx) s.frames.push_back(seg.frames[static_cast<std::size_t>(i)]);
    return s;
}

Slice augment_slice(const Slice& slice, const AugmentConfig& cfg, std::uint64_t sample_index) {
    Rng rng(cfg.seed, sample_index);
    // fixed draw order so the stream is stable regardless of gating
    const bool do_flip = rng.uniform() < cfg.p_flip;
    const bool do_noise = rng.uniform() < cfg.p_noise;
    const bool do_blur = rng.uniform() < cfg.p_blur;

    Slice out = slice;
    if (do_flip) {
        for (auto& f : out.frames) flip_horizontal(f);
    }
    if (do_noise && !out.frames.empty()) {
        // one field, shared by every frame of the stack
        std::vector<float> field(out.frames[0].px.size());
        for (auto& v : field) v = static_cast<float>(rng.normal(0.0, cfg.noise_sigma));
        for (auto& f : out.frames) {
            for (std::size_t i = 0; i < f.px.size(); ++i)
                f.px[i] = std::clamp(f.px[i] + field[i], 0.f, 1.f);
        }
    }
    if (do_blur) {
        const double sigma = rng.uniform(cfg.blur_sigma_lo, cfg.blur_sigma_hi);
        for (auto& f : out.frames) f = gaussian_blur5(f, sigma);
    }
    return out;
}

Tensor<float> slice_to_tensor(const Slice& slice) {
    if (slice.frames.empty()) throw std::invalid_argument("slice_to_tensor: no frames");
    const int t = static_cast<int>(slice.frames.size());
    const int h = slice.frames[0].height;
    const int w = slice.frames[0].width;
    Tensor<float> out({1, 3, t, h, w});
    float* dst = out.data_ptr();
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    for (int ti = 0; ti < t; ++ti) {
        const Image& f = slice.frames[static_cast<std::size_t>(ti)];
        if (f.height != h || f.width != w)
            throw std::invalid_argument("slice_to_tensor: frame extents differ within the slice");
        for (std::int64_t p = 0; p < plane; ++p) {
            for (int c = 0; c < 3; ++c)
                dst[(static_cast<std::int64_t>(c) * t + ti) * plane + p] =
                    f.px[static_cast<std::size_t>(p) * 3 + static_cast<std::size_t>(c)];
        }
    }
    return out;
}

Tensor<float> image_to_tensor(const Image& img) {
    Tensor<float> out({1, 3, img.height, img.width});
    const std::int64_t plane = static_cast<std::int64_t>(img.height) * img.width;
    float* dst = out.data_ptr();
    for (std::int64_t p = 0; p < plane; ++p)
        for (int c = 0; c < 3; ++c)
            dst[static_cast<std::int64_t>(c) * plane + p] =
                img.px[static_cast<std::size_t>(p) * 3 + static_cast<std::size_t>(c)];
    return out;
}

GraphicSignal signal_of(const Slice& s) { return s.signal; }

Tensor<float> signal_to_tensor(const GraphicSignal& g) {
    return Tensor<float>({1, 3}, {g.v[0], g.v[1], g.v[2]});
}

namespace {

void write_raw_f32(const std::string& path, const float* data, std::size_t count) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os.write(reinterpret_cast<const char*>(data),
             static_cast<std::streamsize>(count * sizeof(float)));
    if (!os) throw std::runtime_error("write failed: " + path);
}

std::vector<float> read_raw_f32(const std::string& path, std::size_t count) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path);
    std::vector<float> data(count);
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(count * sizeof(float)));
    if (!is) throw std::runtime_error("truncated slice data: " + path);
    return data;
}

}  // namespace

void write_slice_files(const Slice& slice, const std::string& data_path,
                       const std::string& meta_path) {
    auto t = slice_to_tensor(slice);  // [1,3,T,H,W]
    write_raw_f32(data_path, t.data_ptr(), static_cast<std::size_t>(t.size()));

    std::ofstream meta(meta_path, std::ios::trunc);
    if (!meta) throw std::runtime_error("cannot open for writing: " + meta_path);
    char start[32];
    std::snprintf(start, sizeof(start), "%.6g", slice.clip_start);
    meta << "#ebus-slice v1\n";
    meta << "extents = 3 " << t.extent(2) << " " << t.extent(3) << " " << t.extent(4) << "\n";
    meta << "mode = " << mode_name(slice.mode) << "\n";
    meta << "lesion_id = " << slice.lesion_id << "\n";
    meta << "clip_start = " << start << "\n";
    if (!meta) throw std::runtime_error("write failed: " + meta_path);
}

Slice read_slice_files(const std::string& data_path, const std::string& meta_path) {
    std::ifstream meta(meta_path);
    if (!meta) throw std::runtime_error("cannot open: " + meta_path);
    std::string header;
    std::getline(meta, header);
    if (header != "#ebus-slice v1")
        throw std::runtime_error("not a slice sidecar (bad header): " + meta_path);

    std::int64_t c = 0, t = 0, h = 0, w = 0;
    Slice s;
    std::string line;
    while (std::getline(meta, line)) {
        std::istringstream ls(line);
        std::string key, eq;
        ls >> key >> eq;
        if (key == "extents")
            ls >> c >> t >> h >> w;
        else if (key == "mode") {
            std::string m;
            ls >> m;
            s.mode = mode_from_name(m);
        } else if (key == "lesion_id")
            ls >> s.lesion_id;
        else if (key == "clip_start")
            ls >> s.clip_start;
    }
    if (c != 3 || t <= 0 || h <= 0 || w <= 0)
        throw std::runtime_error("bad extents in slice sidecar: " + meta_path);

    const auto data = read_raw_f32(data_path, static_cast<std::size_t>(c * t * h * w));
    s.frames.assign(static_cast<std::size_t>(t), Image(static_cast<int>(w), static_cast<int>(h)));
    const std::int64_t plane = h * w;
    for (std::int64_t ti = 0; ti < t; ++ti) {
        Image& f = s.frames[static_cast<std::size_t>(ti)];
        for (std::int64_t p = 0; p < plane; ++p)
            for (std::int64_t ch = 0; ch < 3; ++ch)
                f.px[static_cast<std::size_t>(p * 3 + ch)] =
                    data[static_cast<std::size_t>((ch * t + ti) * plane + p)];
    }
    s.signal = build_graphic_signal(s.mode, false);  // elasto presence set by the dataset layer
    return s;
}

void write_elasto_files(const Image& img, const std::string& lesion_id, double coverage,
                        const std::string& data_path, const std::string& meta_path) {
    auto t = image_to_tensor(img);  // [1,3,H,W]
    write_raw_f32(data_path, t.data_ptr(), static_cast<std::size_t>(t.size()));
    std::ofstream meta(meta_path, std::ios::trunc);
    if (!meta) throw std::runtime_error("cannot open for writing: " + meta_path);
    char cov[32];
    std::snprintf(cov, sizeof(cov), "%.6g", coverage);
    meta << "#ebus-elasto v1\n";
    meta << "extents = 3 " << img.height << " " << img.width << "\n";
    meta << "lesion_id = " << lesion_id << "\n";
    meta << "coverage = " << cov << "\n";
    if (!meta) throw std::runtime_error("write failed: " + meta_path);
}

Image read_elasto_files(const std::string& data_path, const std::string& meta_path) {
    std::ifstream meta(meta_path);
    if (!meta) throw std::runtime_error("cannot open: " + meta_path);
    std::string header;
    std::getline(meta, header);
    if (header != "#ebus-elasto v1")
        throw std::runtime_error("not an elasto sidecar (bad header): " + meta_path);
    std::int64_t c = 0, h = 0, w = 0;
    std::string line;
    while (std::getline(meta, line)) {
        std::istringstream ls(line);
        std::string key, eq;
        ls >> key >> eq;
        if (key == "extents") ls >> c >> h >> w;
    }
    if (c != 3 || h <= 0 || w <= 0)
        throw std::runtime_error("bad extents in elasto sidecar: " + meta_path);
    const auto data = read_raw_f32(data_path, static_cast<std::size_t>(c * h * w));
    Image img(static_cast<int>(w), static_cast<int>(h));
    const std::int64_t plane = h * w;
    for (std::int64_t p = 0; p < plane; ++p)
        for (std::int64_t ch = 0; ch < 3; ++ch)
            img.px[static_cast<std::size_t>(p * 3 + ch)] =
                data[static_cast<std::size_t>(ch * plane + p)];
    return img;
}

}  // namespace ebus3d
