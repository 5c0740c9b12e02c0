#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "ebus3d/preproc.hpp"

using namespace ebus3d;

namespace {

Image solid(int w, int h, float r, float g, float b) {
    Image img(w, h);
    for (std::size_t p = 0; p < img.pixel_count(); ++p) {
        img.px[p * 3] = r;
        img.px[p * 3 + 1] = g;
        img.px[p * 3 + 2] = b;
    }
    return img;
}

Image random_image(int w, int h, Rng& rng) {
    Image img(w, h);
    for (auto& v : img.px) v = static_cast<float>(rng.uniform(0.0, 1.0));
    return img;
}

VideoSegment gray_segment(int n_frames, double fps, int w = 16, int h = 12) {
    VideoSegment seg;
    seg.lesion_id = "L0000";
    seg.patient_id = "P000";
    seg.mode = Mode::grayscale;
    seg.fps = fps;
    Rng rng(5);
    for (int i = 0; i < n_frames; ++i) {
        float v = static_cast<float>(i) / static_cast<float>(n_frames);
        seg.frames.push_back(solid(w, h, v, v, v));
    }
    (void)rng;
    return seg;
}

}  // namespace

TEST_CASE("crop_frame windows pixels exactly") {
    Rng rng(1);
    Image raw = random_image(256, 192, rng);
    Image out = crop_image(raw, 100, 50, 64, 48);
    CHECK(out.width == 64);
    CHECK(out.height == 48);
    CHECK(out.at(0, 0, 0) == raw.at(100, 50, 0));
    CHECK(out.at(63, 47, 2) == raw.at(163, 97, 2));

    // (400,300) + 704x576 exceeds a 1024x768 raw frame
    Image big(1024, 768);
    CHECK_THROWS_WITH_AS(crop_image(big, 400, 300, 704, 576), doctest::Contains("exceeds"),
                         std::invalid_argument);

    Image constant = solid(100, 80, 0.25f, 0.25f, 0.25f);
    Image cc = crop_image(constant, 10, 10, 32, 32);
    for (float v : cc.px) CHECK(v == 0.25f);
}

TEST_CASE("clip segmentation counts and overlap") {
    CHECK(segment_clips(6.0).size() == 1);
    auto c12 = segment_clips(12.0);
    REQUIRE(c12.size() == 3);
    CHECK(c12[0].start == 0.0);
    CHECK(c12[1].start == 3.0);
    CHECK(c12[2].start == 6.0);
    CHECK(segment_clips(5.5).empty());
    CHECK(segment_clips(0.0).empty());

    // count formula holds across a duration grid
    for (double d = 0.0; d <= 60.0; d += 0.25) {
        const std::int64_t expect =
            d >= 6.0 ? static_cast<std::int64_t>(std::floor((d - 6.0) / 3.0)) + 1 : 0;
        CHECK(clip_count(d) == expect);
    }

    // adjacent clips overlap by exactly half a clip
    auto c = segment_clips(60.0);
    for (std::size_t i = 1; i < c.size(); ++i)
        CHECK(c[i].start - c[i - 1].start == doctest::Approx(3.0));
}

TEST_CASE("clip frame sampling indices") {
    // fps 30: floor(7.5k + 0.5)
    const std::vector<std::int64_t> want30{0,  8,  15, 23, 30, 38,  45,  53,  60,  68,  75,  83,
                                           90, 98, 105, 113, 120, 128, 135, 143, 150, 158, 165, 173};
    CHECK(sample_clip_indices(0.0, 30.0, 180) == want30);

    // fps 4 takes every frame
    std::vector<std::int64_t> want4(24);
    for (int k = 0; k < 24; ++k) want4[static_cast<std::size_t>(k)] = k;
    CHECK(sample_clip_indices(0.0, 4.0, 24) == want4);

    // fps 8 strides by 2
    std::vector<std::int64_t> want8(24);
    for (int k = 0; k < 24; ++k) want8[static_cast<std::size_t>(k)] = 2 * k;
    CHECK(sample_clip_indices(0.0, 8.0, 48) == want8);

    // clip offset shifts all indices
    CHECK(sample_clip_indices(3.0, 4.0, 36).front() == 12);

    // corrupt fps metadata runs past the last frame
    CHECK_THROWS_AS(sample_clip_indices(0.0, 30.0, 100), std::out_of_range);
}

TEST_CASE("coverage_area on constructed frames") {
    CHECK(coverage_area(solid(20, 20, 0.5f, 0.5f, 0.5f)) == 0.0);  // zero saturation
    CHECK(coverage_area(solid(20, 20, 1.0f, 0.0f, 0.0f)) == 1.0);  // saturated red

    // exactly half the pixels red, half gray
    Image half = solid(20, 20, 0.5f, 0.5f, 0.5f);
    for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 20; ++x) {
            half.at(x, y, 0) = 1.f;
            half.at(x, y, 1) = 0.f;
            half.at(x, y, 2) = 0.f;
        }
    CHECK(coverage_area(half) == doctest::Approx(0.5));

    // dark chromatic pixels fail the value threshold
    CHECK(coverage_area(solid(8, 8, 0.15f, 0.0f, 0.0f)) == 0.0);
}

TEST_CASE("elastography frame selection") {
    VideoSegment seg;
    seg.mode = Mode::elastography;
    seg.fps = 4;
    const std::vector<double> coverages{0.1, 0.5, 0.3, 0.7, 0.2};
    for (double c : coverages) {
        Image f = solid(20, 20, 0.5f, 0.5f, 0.5f);
        const int n_red = static_cast<int>(c * 400);
        for (int i = 0; i < n_red; ++i) {
            f.px[static_cast<std::size_t>(i) * 3] = 1.f;
            f.px[static_cast<std::size_t>(i) * 3 + 1] = 0.f;
            f.px[static_cast<std::size_t>(i) * 3 + 2] = 0.f;
        }
        seg.frames.push_back(f);
    }

    auto picks = select_elastography_frames(seg);
    REQUIRE(picks.size() == 3);
    CHECK(picks[0].frame_index == 3);  // 0.7
    CHECK(picks[1].frame_index == 1);  // 0.5
    CHECK(picks[2].frame_index == 2);  // 0.3
    CHECK(picks[0].coverage == doctest::Approx(0.7));
    // scores non-increasing
    CHECK(picks[0].coverage >= picks[1].coverage);
    CHECK(picks[1].coverage >= picks[2].coverage);

    // fewer candidates than the cap: all returned
    seg.frames.resize(2);
    CHECK(select_elastography_frames(seg).size() == 2);

    // empty segment: empty pick set (downstream zero matrix)
    seg.frames.clear();
    CHECK(select_elastography_frames(seg).empty());

    // ties break toward the earlier frame
    VideoSegment tie;
    tie.mode = Mode::elastography;
    tie.fps = 4;
    tie.frames.push_back(solid(10, 10, 1.f, 0.f, 0.f));
    tie.frames.push_back(solid(10, 10, 1.f, 0.f, 0.f));
    auto tp = select_elastography_frames(tie);
    CHECK(tp[0].frame_index == 0);
    CHECK(tp[1].frame_index == 1);

    VideoSegment wrong = gray_segment(4, 4.0);
    CHECK_THROWS_WITH_AS(select_elastography_frames(wrong), doctest::Contains("expected"),
                         std::invalid_argument);
}

TEST_CASE("graphic signal encoding") {
    CHECK(build_graphic_signal(Mode::grayscale, false).v == std::array<float, 3>{1.f, 0.f, 0.f});
    CHECK(build_graphic_signal(Mode::doppler, true).v == std::array<float, 3>{0.f, 1.f, 1.f});
    CHECK(build_graphic_signal(Mode::grayscale, true).v == std::array<float, 3>{1.f, 0.f, 1.f});
    CHECK_THROWS_AS(build_graphic_signal(Mode::elastography, false), std::invalid_argument);
}

TEST_CASE("make_slice stacks 24 frames with the right signal") {
    auto seg = gray_segment(48, 8.0);  // 6 seconds at 8 fps
    auto clips = segment_clips(seg.duration());
    REQUIRE(clips.size() == 1);
    Slice s = make_slice(seg, clips[0], true);
    CHECK(s.frames.size() == 24);
    CHECK(s.signal.v == std::array<float, 3>{1.f, 0.f, 1.f});
    CHECK(s.mode == Mode::grayscale);
    // frame k comes from source index 2k
    CHECK(s.frames[5].px[0] == seg.frames[10].px[0]);
}

TEST_CASE("augmentation is deterministic and involutive on flips") {
    Rng rng(7);
    Slice s;
    s.lesion_id = "L0001";
    s.mode = Mode::grayscale;
    for (int i = 0; i < 24; ++i) s.frames.push_back(random_image(32, 24, rng));

    AugmentConfig cfg;
    cfg.seed = 99;
    auto a1 = augment_slice(s, cfg, 7);
    auto a2 = augment_slice(s, cfg, 7);
    REQUIRE(a1.frames.size() == a2.frames.size());
    for (std::size_t f = 0; f < a1.frames.size(); ++f)
        CHECK(a1.frames[f].px == a2.frames[f].px);

    // flip twice returns the original exactly
    AugmentConfig flip_only;
    flip_only.p_flip = 1.0;
    flip_only.p_noise = 0.0;
    flip_only.p_blur = 0.0;
    auto once = augment_slice(s, flip_only, 0);
    auto twice = augment_slice(once, flip_only, 0);
    for (std::size_t f = 0; f < s.frames.size(); ++f) CHECK(twice.frames[f].px == s.frames[f].px);

    // find a sample index whose three gate draws all miss: a no-op
    AugmentConfig defaults;
    defaults.seed = 1234;
    bool found = false;
    for (std::uint64_t idx = 0; idx < 200 && !found; ++idx) {
        Rng probe(defaults.seed, idx);
        const bool f = probe.uniform() < 0.2;
        const bool n = probe.uniform() < 0.2;
        const bool b = probe.uniform() < 0.2;
        if (!f && !n && !b) {
            auto out = augment_slice(s, defaults, idx);
            for (std::size_t fi = 0; fi < s.frames.size(); ++fi)
                CHECK(out.frames[fi].px == s.frames[fi].px);
            found = true;
        }
    }
    CHECK(found);
}

TEST_CASE("noise-only augmentation has the configured standard deviation") {
    Slice s;
    s.lesion_id = "L0002";
    for (int i = 0; i < 24; ++i) s.frames.push_back(solid(96, 96, 0.5f, 0.5f, 0.5f));

    AugmentConfig cfg;
    cfg.p_flip = 0.0;
    cfg.p_noise = 1.0;
    cfg.p_blur = 0.0;
    cfg.seed = 31;
    auto out = augment_slice(s, cfg, 0);

    double sum = 0.0, sum2 = 0.0;
    std::int64_t n = 0;
    for (std::size_t f = 0; f < out.frames.size(); ++f) {
        for (std::size_t i = 0; i < out.frames[f].px.size(); ++i) {
            const double d = out.frames[f].px[i] - s.frames[f].px[i];
            sum += d;
            sum2 += d * d;
            ++n;
        }
    }
    const double mean = sum / n;
    const double sd = std::sqrt(sum2 / n - mean * mean);
    CHECK(sd > 0.008);
    CHECK(sd < 0.012);

    // identical field on every frame
    for (std::size_t f = 1; f < out.frames.size(); ++f)
        CHECK(out.frames[f].px == out.frames[0].px);

    // pixels stay in range
    for (const auto& fr : out.frames)
        for (float v : fr.px) {
            CHECK(v >= 0.f);
            CHECK(v <= 1.f);
        }
}

TEST_CASE("blur preserves constants and smooths noise") {
    Image constant = solid(40, 30, 0.42f, 0.42f, 0.42f);
    Image blurred = gaussian_blur5(constant, 1.0);
    for (float v : blurred.px) CHECK(v == doctest::Approx(0.42f).epsilon(1e-5));

    Rng rng(3);
    Image noisy = random_image(64, 64, rng);
    Image smooth = gaussian_blur5(noisy, 1.5);
    auto variance = [](const Image& img) {
        double m = 0, v = 0;
        for (float x : img.px) m += x;
        m /= static_cast<double>(img.px.size());
        for (float x : img.px) v += (x - m) * (x - m);
        return v / static_cast<double>(img.px.size());
    };
    CHECK(variance(smooth) < variance(noisy) * 0.5);
}

TEST_CASE("slice tensor layout is CxTxHxW") {
    Slice s;
    s.frames.assign(3, Image(4, 2));  // T=3, H=2, W=4
    s.frames[1].at(2, 1, 0) = 0.25f;  // C=0,T=1,H=1,W=2
    s.frames[2].at(0, 0, 2) = 0.75f;  // C=2,T=2,H=0,W=0
    auto t = slice_to_tensor(s);
    CHECK(t.shape() == Shape{1, 3, 3, 2, 4});
    CHECK(t.at({0, 0, 1, 1, 2}) == 0.25f);
    CHECK(t.at({0, 2, 2, 0, 0}) == 0.75f);

    Image img(3, 2);
    img.at(1, 1, 2) = 0.5f;
    auto it = image_to_tensor(img);
    CHECK(it.shape() == Shape{1, 3, 2, 3});
    CHECK(it.at({0, 2, 1, 1}) == 0.5f);
}

TEST_CASE("slice files round-trip exactly") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "ebus3d_slice_io";
    fs::create_directories(dir);

    Rng rng(11);
    Slice s;
    s.lesion_id = "L0042";
    s.mode = Mode::doppler;
    s.clip_start = 3.0;
    for (int i = 0; i < 24; ++i) s.frames.push_back(random_image(20, 16, rng));

    const std::string data = (dir / "s.f32").string();
    const std::string meta = (dir / "s.meta").string();
    write_slice_files(s, data, meta);
    Slice r = read_slice_files(data, meta);
    CHECK(r.lesion_id == "L0042");
    CHECK(r.mode == Mode::doppler);
    CHECK(r.clip_start == 3.0);
    REQUIRE(r.frames.size() == 24);
    for (std::size_t f = 0; f < 24; ++f) CHECK(r.frames[f].px == s.frames[f].px);

    // elasto container
    Image img = random_image(20, 16, rng);
    const std::string edata = (dir / "e.f32").string();
    const std::string emeta = (dir / "e.meta").string();
    write_elasto_files(img, "L0042", 0.66, edata, emeta);
    Image back = read_elasto_files(edata, emeta);
    CHECK(back.px == img.px);

    fs::remove_all(dir);
}

TEST_CASE("ppm round trip quantizes to 8 bits") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "ebus3d_ppm_io";
    fs::create_directories(dir);
    Rng rng(13);
    Image img = random_image(33, 21, rng);
    const std::string path = (dir / "f.ppm").string();
    write_ppm(img, path);
    Image back = read_ppm(path);
    CHECK(back.width == img.width);
    CHECK(back.height == img.height);
    for (std::size_t i = 0; i < img.px.size(); ++i)
        CHECK(std::abs(back.px[i] - img.px[i]) <= 0.5f / 255.f + 1e-6f);

    // a second write of the read-back image is byte-stable
    const std::string path2 = (dir / "g.ppm").string();
    write_ppm(back, path2);
    Image again = read_ppm(path2);
    CHECK(again.px == back.px);
    fs::remove_all(dir);
}
