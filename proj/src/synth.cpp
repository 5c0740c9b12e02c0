#include "ebus3d/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "ebus3d/parallel.hpp"

namespace fs = std::filesystem;

namespace ebus3d {

void SynthConfig::validate() const {
    if (patients < 1) throw std::invalid_argument("synth: patients must be >= 1");
    if (lesions_per_patient_min < 1 || lesions_per_patient_max < lesions_per_patient_min)
        throw std::invalid_argument("synth: bad lesions-per-patient range");
    if (malignant_ratio <= 0.0 || malignant_ratio >= 1.0)
        throw std::invalid_argument("synth: malignant_ratio must lie in (0,1)");
    if (fps <= 0.0) throw std::invalid_argument("synth: fps must be positive");
    if (duration_min < 0.0 || duration_max < duration_min)
        throw std::invalid_argument("synth: bad duration range");
    if (frame_width < 16 || frame_height < 16)
        throw std::invalid_argument("synth: frame size too small");
    if (train_fraction <= 0.0 || train_fraction >= 1.0)
        throw std::invalid_argument("synth: train_fraction must lie in (0,1)");
    if (out_dir.empty()) throw std::invalid_argument("synth: out_dir not set");
    if (signal == ClassSignal::temporal_only && fps != 4.0)
        throw std::invalid_argument(
            "synth: temporal_only datasets are defined on the 4 Hz grid; set fps = 4");
}

namespace {

constexpr double kPi = std::numbers::pi_v<double>;

// Random values on a coarse lattice, sampled bilinearly: cheap smooth or
// cellular noise depending on the cell size.
struct NoiseGrid {
    int gw = 0, gh = 0;
    double cell = 8.0;
    std::vector<float> vals;  // (gw+1)*(gh+1), in [-1,1]

    static NoiseGrid make(int width, int height, double cell, Rng& rng) {
        NoiseGrid g;
        g.cell = cell;
        g.gw = static_cast<int>(width / cell) + 2;
        g.gh = static_cast<int>(height / cell) + 2;
        g.vals.resize(static_cast<std::size_t>((g.gw + 1) * (g.gh + 1)));
        for (auto& v : g.vals) v = static_cast<float>(rng.uniform(-1.0, 1.0));
        return g;
    }

    float sample(double x, double y) const {
        double gx = x / cell, gy = y / cell;
        if (gx < 0) gx = 0;
        if (gy < 0) gy = 0;
        int ix = static_cast<int>(gx), iy = static_cast<int>(gy);
        if (ix >= gw) ix = gw - 1;
        if (iy >= gh) iy = gh - 1;
        const double fx = gx - ix, fy = gy - iy;
        auto at = [&](int xx, int yy) { return vals[static_cast<std::size_t>(yy * (gw + 1) + xx)]; };
        const double a = at(ix, iy) * (1 - fx) + at(ix + 1, iy) * fx;
        const double b = at(ix, iy + 1) * (1 - fx) + at(ix + 1, iy + 1) * fx;
        return static_cast<float>(a * (1 - fy) + b * fy);
    }
};

struct LesionParams {
    double cx, cy, ax, ay, theta;   // ellipse center, semi-axes, orientation
    double base;                    // interior base intensity
    double drift_amp, drift_phase;  // slow circular wander of the center
    double flicker_hz, flicker_phase;
    int brightness_shift;           // temporal_only: rotation of the sequence
    double doppler_side;            // patch placement
    double elasto_phase;
};

LesionParams draw_params(const SynthConfig& cfg, Rng& rng) {
    LesionParams p{};
    p.cx = rng.uniform(0.40, 0.60) * cfg.frame_width;
    p.cy = rng.uniform(0.40, 0.60) * cfg.frame_height;
    p.ax = rng.uniform(0.19, 0.24) * cfg.frame_width;
    p.ay = rng.uniform(0.19, 0.24) * cfg.frame_height;
    p.theta = rng.uniform(0.0, kPi);
    p.base = rng.uniform(0.44, 0.50);
    p.drift_amp = rng.uniform(0.5, 1.5);
    p.drift_phase = rng.uniform(0.0, 2 * kPi);
    p.flicker_hz = rng.uniform(1.0, 2.0);
    p.flicker_phase = rng.uniform(0.0, 2 * kPi);
    p.brightness_shift = static_cast<int>(rng.uniform_int(0, 23));
    p.doppler_side = rng.bernoulli(0.5) ? 1.0 : -1.0;
    p.elasto_phase = rng.uniform(0.0, 2 * kPi);
    return p;
}

// brightness multiset shared by both classes in temporal_only mode
std::vector<double> brightness_sequence(bool malignant, int shift) {
    std::vector<double> v(24);
    for (int k = 0; k < 24; ++k) v[static_cast<std::size_t>(k)] = 0.25 * std::sin(2 * kPi * k / 24.0);
    std::vector<double> seq(24);
    if (!malignant) {
        // smooth: one full period, rotated
        for (int k = 0; k < 24; ++k) seq[static_cast<std::size_t>(k)] = v[static_cast<std::size_t>((k + shift) % 24)];
    } else {
        // alternating: same values, reordered to jump between extremes
        std::vector<double> sorted = v;
        std::sort(sorted.begin(), sorted.end());
        std::vector<double> zig(24);
        for (int i = 0; i < 12; ++i) {
            zig[static_cast<std::size_t>(2 * i)] = sorted[static_cast<std::size_t>(i)];
            zig[static_cast<std::size_t>(2 * i + 1)] = sorted[static_cast<std::size_t>(23 - i)];
        }
        for (int k = 0; k < 24; ++k) seq[static_cast<std::size_t>(k)] = zig[static_cast<std::size_t>((k + shift) % 24)];
    }
    for (auto& x : seq) x += 1.0;
    return seq;
}

void colormap_stiffness(double s, float& r, float& g, float& b) {
    // blue -> green -> red
    if (s < 0.5) {
        const float t = static_cast<float>(s * 2.0);
        r = 0.05f;
        g = t;
        b = 1.f - t;
    } else {
        const float t = static_cast<float>((s - 0.5) * 2.0);
        r = t;
        g = 1.f - t;
        b = 0.05f;
    }
}

struct LesionRenderer {
    const SynthConfig& cfg;
    std::int64_t lesion_index;
    bool malignant;
    LesionParams p;
    NoiseGrid bg_grid, smooth_grid, stiffness_grid;
    std::vector<double> brightness;  // temporal_only only

    LesionRenderer(const SynthConfig& cfg_, std::int64_t idx, bool malignant_)
        : cfg(cfg_), lesion_index(idx), malignant(malignant_) {
        Rng rng(cfg.seed, 0x1e510000ull + static_cast<std::uint64_t>(idx));
        p = draw_params(cfg, rng);
        bg_grid = NoiseGrid::make(cfg.frame_width, cfg.frame_height, 9.0, rng);
        smooth_grid = NoiseGrid::make(cfg.frame_width, cfg.frame_height, 24.0, rng);
        stiffness_grid = NoiseGrid::make(cfg.frame_width, cfg.frame_height, 28.0, rng);
        if (cfg.signal == ClassSignal::temporal_only)
            brightness = brightness_sequence(malignant, p.brightness_shift);
    }

    // squared elliptical radius at a drifted center
    double radius2(double x, double y, double ox, double oy) const {
        const double dx = x - (p.cx + ox), dy = y - (p.cy + oy);
        const double c = std::cos(p.theta), s = std::sin(p.theta);
        const double u = (dx * c + dy * s) / p.ax;
        const double v = (-dx * s + dy * c) / p.ay;
        return u * u + v * v;
    }

    Image render(Mode mode, std::int64_t frame_idx) const {
        const int W = cfg.frame_width, H = cfg.frame_height;
        Image img(W, H);
        const double t = static_cast<double>(frame_idx) / cfg.fps;

        // slow wander of the lesion center
        const double ox = p.drift_amp * std::cos(2 * kPi * 0.15 * t + p.drift_phase);
        const double oy = p.drift_amp * std::sin(2 * kPi * 0.15 * t + p.drift_phase);

        const bool temporal_only = cfg.signal == ClassSignal::temporal_only;
        double gain = 1.0;
        if (temporal_only) {
            gain = brightness[static_cast<std::size_t>(frame_idx % 24)];
        } else if (malignant) {
            gain = 1.0 + 0.18 * std::sin(2 * kPi * p.flicker_hz * t + p.flicker_phase);
        }

        // per-frame speckle for malignant texture (fresh field each frame)
        NoiseGrid speckle;
        if (!temporal_only && malignant) {
            Rng frng(cfg.seed, 0x2b000000ull + static_cast<std::uint64_t>(lesion_index) * 100000ull +
                                   static_cast<std::uint64_t>(frame_idx));
            speckle = NoiseGrid::make(W, H, 3.0, frng);
        }

        // elastography overlay coverage for this frame
        const double cov =
            0.35 + 0.30 * (1.0 + std::sin(2 * kPi * t / 2.5 + p.elasto_phase));  // in [0.35, 0.95]

        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                const double r2 = radius2(x, y, ox, oy);
                const double mask = std::clamp(2.0 * (1.0 - r2), 0.0, 1.0);
                // background sits near the blob base so texture, not the
                // blob outline, carries the pixel-variance class signal
                const float bgv = static_cast<float>(0.41 + 0.03 * bg_grid.sample(x, y));

                double tex;
                if (temporal_only) {
                    tex = p.base + 0.05 * smooth_grid.sample(x + 3 * ox, y + 3 * oy);
                } else if (malignant) {
                    tex = p.base + 0.25 * speckle.sample(x, y);
                } else {
                    tex = p.base + 0.02 * smooth_grid.sample(x + 3 * ox, y + 3 * oy);
                }
                tex *= gain;

                float v = static_cast<float>(std::clamp(bgv * (1.0 - mask) + tex * mask, 0.0, 1.0));
                float r = v, g = v, b = v;

                if (mode == Mode::doppler && mask > 0.15) {
                    // chromatic flow patches inside the lesion
                    const double px1 = p.cx + ox + p.doppler_side * 0.35 * p.ax;
                    const double py1 = p.cy + oy + 0.2 * p.ay * std::sin(2 * kPi * 0.4 * t);
                    const double d1 = ((x - px1) * (x - px1)) / (0.12 * p.ax * 0.12 * p.ax) +
                                      ((y - py1) * (y - py1)) / (0.16 * p.ay * 0.16 * p.ay);
                    const double px2 = p.cx + ox - p.doppler_side * 0.3 * p.ax;
                    const double py2 = p.cy + oy - 0.25 * p.ay;
                    const double d2 = ((x - px2) * (x - px2)) / (0.10 * p.ax * 0.10 * p.ax) +
                                      ((y - py2) * (y - py2)) / (0.12 * p.ay * 0.12 * p.ay);
                    if (d1 < 1.0) {
                        r = std::min(1.f, v + 0.55f);
                        g = v * 0.3f;
                        b = v * 0.3f;
                    } else if (d2 < 1.0) {
                        r = v * 0.3f;
                        g = v * 0.3f;
                        b = std::min(1.f, v + 0.55f);
                    }
                } else if (mode == Mode::elastography && r2 < cov) {
                    // stiffness colormap over the covered part of the lesion
                    const double s =
                        std::clamp(0.5 + 0.5 * stiffness_grid.sample(x, y), 0.0, 1.0);
                    float cr, cg, cb;
                    colormap_stiffness(s, cr, cg, cb);
                    r = 0.3f * v + 0.7f * cr;
                    g = 0.3f * v + 0.7f * cg;
                    b = 0.3f * v + 0.7f * cb;
                }

                const std::size_t off = (static_cast<std::size_t>(y) * W + x) * 3;
                img.px[off] = r;
                img.px[off + 1] = g;
                img.px[off + 2] = b;
            }
        }
        return img;
    }
};

std::string label_name(int label) { return label == 1 ? "malignant" : "benign"; }

int label_from_name(const std::string& s) {
    if (s == "benign") return 0;
    if (s == "malignant") return 1;
    throw std::runtime_error("manifest: unknown label: " + s);
}

struct ManifestRow {
    std::string patient_id, split, lesion_id, label, mode, rel_path;
    double fps = 0;
    std::int64_t n_frames = 0;
};

std::vector<ManifestRow> read_manifest_rows(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open manifest: " + path);
    std::string header;
    std::getline(is, header);
    if (header != "#ebus-synth v1")
        throw std::runtime_error("not an ebus-synth manifest (bad header): " + path);
    std::vector<ManifestRow> rows;
    std::string line;
    int line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ls(line);
        ManifestRow r;
        if (!(ls >> r.patient_id >> r.split >> r.lesion_id >> r.label >> r.mode >> r.fps >>
              r.n_frames >> r.rel_path))
            throw std::runtime_error("manifest line " + std::to_string(line_no) +
                                     ": expected 8 tab-separated fields");
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace

void write_manifest(const Manifest& m, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open manifest for writing: " + path);
    os << "#ebus-synth v1\n";
    char fps_buf[32];
    for (const auto& p : m.patients) {
        for (const auto& l : p.lesions) {
            for (const auto& s : l.segments) {
                std::snprintf(fps_buf, sizeof(fps_buf), "%.6g", s.fps);
                os << p.patient_id << '\t' << p.split << '\t' << l.lesion_id << '\t'
                   << label_name(l.label) << '\t' << mode_name(s.mode) << '\t' << fps_buf << '\t'
                   << s.n_frames << '\t' << s.rel_path << '\n';
            }
        }
    }
    if (!os) throw std::runtime_error("write failed for manifest: " + path);
}

Manifest read_manifest(const std::string& path) {
    Manifest m;
    m.root_dir = fs::path(path).parent_path().string();
    for (const auto& r : read_manifest_rows(path)) {
        PatientEntry* patient = nullptr;
        for (auto& p : m.patients)
            if (p.patient_id == r.patient_id) patient = &p;
        if (!patient) {
            m.patients.push_back({r.patient_id, r.split, {}});
            patient = &m.patients.back();
        } else if (patient->split != r.split) {
            throw std::runtime_error("manifest: patient " + r.patient_id +
                                     " appears with conflicting splits");
        }
        LesionEntry* lesion = nullptr;
        for (auto& l : patient->lesions)
            if (l.lesion_id == r.lesion_id) lesion = &l;
        if (!lesion) {
            patient->lesions.push_back({r.lesion_id, label_from_name(r.label), {}});
            lesion = &patient->lesions.back();
        } else if (lesion->label != label_from_name(r.label)) {
            throw std::runtime_error("manifest: lesion " + r.lesion_id +
                                     " appears with conflicting labels");
        }
        lesion->segments.push_back({mode_from_name(r.mode), r.fps, r.n_frames, r.rel_path});
    }
    return m;
}

void split_by_patient(Manifest& m, double train_fraction, std::uint64_t seed) {
    const std::int64_t n = static_cast<std::int64_t>(m.patients.size());
    if (n < 2)
        throw std::invalid_argument("split_by_patient: need at least 2 patients, have " +
                                    std::to_string(n));
    std::vector<std::size_t> order(m.patients.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed, 0x5917ull);
    std::shuffle(order.begin(), order.end(), rng.engine());

    std::int64_t n_train = std::llround(train_fraction * static_cast<double>(n));
    n_train = std::clamp<std::int64_t>(n_train, 1, n - 1);
    for (std::int64_t i = 0; i < n; ++i)
        m.patients[order[static_cast<std::size_t>(i)]].split = i < n_train ? "train" : "validation";

    // both splits should see both classes when the pool makes it possible
    auto split_has = [&](const std::string& split, int label) {
        for (const auto& p : m.patients) {
            if (p.split != split) continue;
            for (const auto& l : p.lesions)
                if (l.label == label) return true;
        }
        return false;
    };
    auto balanced = [&]() {
        return split_has("train", 0) && split_has("train", 1) && split_has("validation", 0) &&
               split_has("validation", 1);
    };
    if (!balanced()) {
        for (std::size_t a = 0; a < m.patients.size() && !balanced(); ++a) {
            if (m.patients[a].split != "train") continue;
            for (std::size_t b = 0; b < m.patients.size() && !balanced(); ++b) {
                if (m.patients[b].split != "validation") continue;
                std::swap(m.patients[a].split, m.patients[b].split);
                if (!balanced()) std::swap(m.patients[a].split, m.patients[b].split);
            }
        }
    }
}

Manifest generate_dataset(const SynthConfig& cfg) {
    cfg.validate();

    std::error_code ec;
    fs::create_directories(cfg.out_dir, ec);
    if (ec) throw std::runtime_error("cannot create output directory " + cfg.out_dir + ": " +
                                     ec.message());
    {
        // fail early on read-only targets
        const fs::path probe = fs::path(cfg.out_dir) / ".write_probe";
        std::ofstream f(probe);
        if (!f) throw std::runtime_error("output directory is not writable: " + cfg.out_dir);
        f.close();
        fs::remove(probe);
    }

    // layout: patients, lesions, labels, segment plans
    Manifest m;
    m.root_dir = cfg.out_dir;
    std::int64_t lesion_counter = 0;
    struct Plan {
        std::size_t patient_idx;
        std::int64_t lesion_global;
        std::vector<SegmentEntry> segments;
    };
    std::vector<Plan> plans;

    for (int pi = 0; pi < cfg.patients; ++pi) {
        char pid[16];
        std::snprintf(pid, sizeof(pid), "P%03d", pi);
        PatientEntry patient;
        patient.patient_id = pid;
        patient.split = "train";
        Rng prng(cfg.seed, 0x9a7e0000ull + static_cast<std::uint64_t>(pi));
        const int n_lesions = static_cast<int>(
            prng.uniform_int(cfg.lesions_per_patient_min, cfg.lesions_per_patient_max));
        for (int li = 0; li < n_lesions; ++li) {
            char lid[16];
            std::snprintf(lid, sizeof(lid), "L%04d", static_cast<int>(lesion_counter));
            LesionEntry lesion;
            lesion.lesion_id = lid;
            lesion.label = 0;  // assigned below

            Rng lrng(cfg.seed, 0x7e510000ull + static_cast<std::uint64_t>(lesion_counter));
            const double dur = lrng.uniform(cfg.duration_min, cfg.duration_max);
            const auto frames_of = [&](double seconds) {
                return static_cast<std::int64_t>(std::llround(seconds * cfg.fps));
            };
            const std::string base = std::string(pid) + "/" + lid;
            lesion.segments.push_back(
                {Mode::grayscale, cfg.fps, frames_of(dur), base + "/grayscale"});
            if (lrng.bernoulli(cfg.p_doppler)) {
                const double ddur = lrng.uniform(cfg.duration_min, cfg.duration_max);
                lesion.segments.push_back(
                    {Mode::doppler, cfg.fps, frames_of(ddur), base + "/doppler"});
            }
            if (lrng.bernoulli(cfg.p_elasto)) {
                lesion.segments.push_back({Mode::elastography, cfg.fps,
                                           frames_of(cfg.elasto_seconds), base + "/elastography"});
            }
            patient.lesions.push_back(lesion);
            plans.push_back({static_cast<std::size_t>(pi), lesion_counter, lesion.segments});
            ++lesion_counter;
        }
        m.patients.push_back(std::move(patient));
    }

    // label assignment: round(ratio * n) malignant, spread by a seeded shuffle
    const std::int64_t n_total = lesion_counter;
    const std::int64_t n_malignant =
        static_cast<std::int64_t>(std::floor(cfg.malignant_ratio * static_cast<double>(n_total) + 0.5));
    std::vector<std::int64_t> order(static_cast<std::size_t>(n_total));
    for (std::int64_t i = 0; i < n_total; ++i) order[static_cast<std::size_t>(i)] = i;
    Rng label_rng(cfg.seed, 0x1abe1ull);
    std::shuffle(order.begin(), order.end(), label_rng.engine());
    std::vector<int> labels(static_cast<std::size_t>(n_total), 0);
    for (std::int64_t i = 0; i < n_malignant; ++i) labels[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1;
    {
        std::int64_t gi = 0;
        for (auto& p : m.patients)
            for (auto& l : p.lesions) l.label = labels[static_cast<std::size_t>(gi++)];
    }

    split_by_patient(m, cfg.train_fraction, cfg.seed);

    // render all segments; lesions are independent, so this may run on
    // several workers without affecting the output
    parallel_for(static_cast<std::int64_t>(plans.size()), [&](std::int64_t i) {
        const Plan& plan = plans[static_cast<std::size_t>(i)];
        const bool malignant = labels[static_cast<std::size_t>(plan.lesion_global)] == 1;
        LesionRenderer renderer(cfg, plan.lesion_global, malignant);
        for (const auto& seg : plan.segments) {
            const fs::path dir = fs::path(cfg.out_dir) / seg.rel_path;
            fs::create_directories(dir);
            for (std::int64_t f = 0; f < seg.n_frames; ++f) {
                char name[32];
                std::snprintf(name, sizeof(name), "frame_%06d.ppm", static_cast<int>(f));
                write_ppm(renderer.render(seg.mode, f), (dir / name).string());
            }
        }
    });

    write_manifest(m, (fs::path(cfg.out_dir) / "manifest.tsv").string());
    return m;
}

std::vector<std::string> validate_manifest(const std::string& manifest_path) {
    std::vector<std::string> violations;
    std::vector<ManifestRow> rows;
    try {
        rows = read_manifest_rows(manifest_path);
    } catch (const std::exception& e) {
        violations.push_back(e.what());
        return violations;
    }
    const fs::path root = fs::path(manifest_path).parent_path();

    // lesion ids must be unique (to one patient) and consistently labeled
    std::map<std::string, std::string> lesion_patient;
    std::map<std::string, std::string> lesion_label;
    std::map<std::string, std::string> patient_split;
    std::map<std::string, bool> lesion_dup_reported;
    for (const auto& r : rows) {
        auto it = lesion_patient.find(r.lesion_id);
        if (it == lesion_patient.end()) {
            lesion_patient[r.lesion_id] = r.patient_id;
            lesion_label[r.lesion_id] = r.label;
        } else if (it->second != r.patient_id && !lesion_dup_reported[r.lesion_id]) {
            violations.push_back("duplicate lesion id " + r.lesion_id + " (patients " + it->second +
                                 " and " + r.patient_id + ")");
            lesion_dup_reported[r.lesion_id] = true;
        } else if (lesion_label[r.lesion_id] != r.label && !lesion_dup_reported[r.lesion_id]) {
            violations.push_back("conflicting label for lesion " + r.lesion_id);
            lesion_dup_reported[r.lesion_id] = true;
        }

        auto sp = patient_split.find(r.patient_id);
        if (sp == patient_split.end())
            patient_split[r.patient_id] = r.split;
        else if (sp->second != r.split)
            violations.push_back("patient " + r.patient_id + " has conflicting splits");

        if (r.split != "train" && r.split != "validation")
            violations.push_back("unknown split `" + r.split + "` for patient " + r.patient_id);
        if (r.fps <= 0)
            violations.push_back("non-positive fps for lesion " + r.lesion_id);
        try {
            mode_from_name(r.mode);
            label_from_name(r.label);
        } catch (const std::exception& e) {
            violations.push_back(e.what());
        }

        for (std::int64_t f = 0; f < r.n_frames; ++f) {
            char name[32];
            std::snprintf(name, sizeof(name), "frame_%06d.ppm", static_cast<int>(f));
            const fs::path frame = root / r.rel_path / name;
            if (!fs::exists(frame))
                violations.push_back("missing file " + (fs::path(r.rel_path) / name).string());
        }
    }
    return violations;
}

VideoSegment load_segment(const Manifest& m, const PatientEntry& patient,
                          const LesionEntry& lesion, const SegmentEntry& seg) {
    VideoSegment v;
    v.lesion_id = lesion.lesion_id;
    v.patient_id = patient.patient_id;
    v.mode = seg.mode;
    v.fps = seg.fps;
    v.frames.reserve(static_cast<std::size_t>(seg.n_frames));
    for (std::int64_t f = 0; f < seg.n_frames; ++f) {
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%06d.ppm", static_cast<int>(f));
        v.frames.push_back(read_ppm((fs::path(m.root_dir) / seg.rel_path / name).string()));
    }
    return v;
}

}  // namespace ebus3d
