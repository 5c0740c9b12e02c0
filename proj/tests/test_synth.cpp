#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "ebus3d/synth.hpp"

namespace fs = std::filesystem;
using namespace ebus3d;

namespace {

SynthConfig tiny_config(const std::string& out) {
    SynthConfig cfg;
    cfg.patients = 4;
    cfg.lesions_per_patient_min = 1;
    cfg.lesions_per_patient_max = 2;
    cfg.malignant_ratio = 0.5;
    cfg.duration_min = 6.0;
    cfg.duration_max = 6.0;
    cfg.frame_width = 48;
    cfg.frame_height = 36;
    cfg.p_doppler = 1.0;
    cfg.p_elasto = 1.0;
    cfg.seed = 11;
    cfg.out_dir = out;
    return cfg;
}

std::string file_bytes(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

// per-frame pixel variance, averaged over a segment's frames
double mean_pixel_variance(const VideoSegment& seg) {
    double acc = 0.0;
    for (const auto& f : seg.frames) {
        double m = 0, v = 0;
        for (float x : f.px) m += x;
        m /= static_cast<double>(f.px.size());
        for (float x : f.px) v += (x - m) * (x - m);
        acc += v / static_cast<double>(f.px.size());
    }
    return acc / static_cast<double>(seg.frames.size());
}

}  // namespace

TEST_CASE("generation is byte-deterministic") {
    const fs::path base = fs::temp_directory_path() / "ebus3d_synth_det";
    fs::remove_all(base);
    auto cfg1 = tiny_config((base / "a").string());
    auto cfg2 = tiny_config((base / "b").string());
    generate_dataset(cfg1);
    generate_dataset(cfg2);

    // same relative trees, identical bytes
    std::vector<fs::path> rel;
    for (const auto& e : fs::recursive_directory_iterator(base / "a"))
        if (e.is_regular_file()) rel.push_back(fs::relative(e.path(), base / "a"));
    std::sort(rel.begin(), rel.end());
    CHECK(rel.size() > 4);
    for (const auto& r : rel) {
        REQUIRE(fs::exists(base / "b" / r));
        CHECK(file_bytes(base / "a" / r) == file_bytes(base / "b" / r));
    }
    fs::remove_all(base);
}

TEST_CASE("lesion and class counts follow the config") {
    const fs::path out = fs::temp_directory_path() / "ebus3d_synth_counts";
    fs::remove_all(out);
    SynthConfig cfg = tiny_config(out.string());
    cfg.patients = 10;
    cfg.lesions_per_patient_min = 2;
    cfg.lesions_per_patient_max = 2;
    cfg.malignant_ratio = 0.5;
    cfg.frame_width = 24;
    cfg.frame_height = 20;
    cfg.p_doppler = 0.0;
    cfg.p_elasto = 0.0;
    Manifest m = generate_dataset(cfg);

    CHECK(m.lesion_count() == 20);
    std::int64_t malignant = 0;
    for (const auto& p : m.patients)
        for (const auto& l : p.lesions) malignant += l.label;
    CHECK(malignant == 10);  // floor(0.5 * 20 + 0.5)
    fs::remove_all(out);
}

TEST_CASE("malignant lesions carry at least twice the benign pixel variance") {
    const fs::path out = fs::temp_directory_path() / "ebus3d_synth_var";
    fs::remove_all(out);
    SynthConfig cfg = tiny_config(out.string());
    cfg.patients = 6;
    cfg.lesions_per_patient_min = 2;
    cfg.lesions_per_patient_max = 2;
    cfg.frame_width = 96;
    cfg.frame_height = 80;
    cfg.p_doppler = 0.0;
    cfg.p_elasto = 0.0;
    Manifest m = generate_dataset(cfg);

    double benign = 0, malignant = 0;
    int nb = 0, nm = 0;
    for (const auto& p : m.patients) {
        for (const auto& l : p.lesions) {
            auto seg = load_segment(m, p, l, *l.segment(Mode::grayscale));
            const double v = mean_pixel_variance(seg);
            if (l.label == 1) {
                malignant += v;
                ++nm;
            } else {
                benign += v;
                ++nb;
            }
        }
    }
    REQUIRE(nb > 0);
    REQUIRE(nm > 0);
    benign /= nb;
    malignant /= nm;
    CHECK(malignant >= 2.0 * benign);
    fs::remove_all(out);
}

TEST_CASE("a one-feature logistic classifier separates the default dataset") {
    const fs::path out = fs::temp_directory_path() / "ebus3d_synth_sep";
    fs::remove_all(out);
    SynthConfig cfg = tiny_config(out.string());
    cfg.patients = 20;
    cfg.lesions_per_patient_min = 2;
    cfg.lesions_per_patient_max = 2;
    cfg.frame_width = 96;
    cfg.frame_height = 80;
    cfg.p_doppler = 0.0;
    cfg.p_elasto = 0.0;
    cfg.seed = 5;
    Manifest m = generate_dataset(cfg);
    REQUIRE(m.lesion_count() == 40);

    std::vector<double> feature;
    std::vector<int> label;
    for (const auto& p : m.patients) {
        for (const auto& l : p.lesions) {
            auto seg = load_segment(m, p, l, *l.segment(Mode::grayscale));
            feature.push_back(mean_pixel_variance(seg));
            label.push_back(l.label);
        }
    }

    // plain logistic regression on (feature, 1), gradient descent
    double w = 0.0, b = 0.0;
    const double mean_f = [&] {
        double s = 0;
        for (double f : feature) s += f;
        return s / static_cast<double>(feature.size());
    }();
    for (int iter = 0; iter < 4000; ++iter) {
        double gw = 0, gb = 0;
        for (std::size_t i = 0; i < feature.size(); ++i) {
            const double x = feature[i] / mean_f;  // scale-normalized
            const double pgt = 1.0 / (1.0 + std::exp(-(w * x + b)));
            gw += (pgt - label[i]) * x;
            gb += (pgt - label[i]);
        }
        w -= 0.5 * gw / static_cast<double>(feature.size());
        b -= 0.5 * gb / static_cast<double>(feature.size());
    }
    int correct = 0;
    for (std::size_t i = 0; i < feature.size(); ++i) {
        const double p = 1.0 / (1.0 + std::exp(-(w * feature[i] / mean_f + b)));
        if ((p > 0.5 ? 1 : 0) == label[i]) ++correct;
    }
    CHECK(static_cast<double>(correct) / static_cast<double>(feature.size()) >= 0.9);
    fs::remove_all(out);
}

TEST_CASE("split_by_patient is sound") {
    const fs::path out = fs::temp_directory_path() / "ebus3d_synth_split";
    fs::remove_all(out);
    SynthConfig cfg = tiny_config(out.string());
    cfg.patients = 10;
    cfg.frame_width = 24;
    cfg.frame_height = 20;
    cfg.p_doppler = 0.0;
    cfg.p_elasto = 0.0;
    Manifest m = generate_dataset(cfg);

    for (std::uint64_t seed : {1ull, 2ull, 3ull, 17ull, 91ull}) {
        split_by_patient(m, 0.7, seed);
        std::set<std::string> train, val;
        for (const auto& p : m.patients) (p.split == "train" ? train : val).insert(p.patient_id);
        CHECK(train.size() == 7);
        CHECK(val.size() == 3);
        for (const auto& id : train) CHECK(val.count(id) == 0);

        // both classes on both sides (feasible at this size and ratio)
        std::map<std::string, std::set<int>> classes;
        for (const auto& p : m.patients)
            for (const auto& l : p.lesions) classes[p.split].insert(l.label);
        CHECK(classes["train"].size() == 2);
        CHECK(classes["validation"].size() == 2);
    }

    Manifest one;
    one.patients.push_back({"P000", "train", {}});
    CHECK_THROWS_AS(split_by_patient(one, 0.7, 1), std::invalid_argument);
    fs::remove_all(out);
}

TEST_CASE("validate_manifest reports exactly the injected problems") {
    const fs::path out = fs::temp_directory_path() / "ebus3d_synth_validate";
    fs::remove_all(out);
    SynthConfig cfg = tiny_config(out.string());
    generate_dataset(cfg);
    const std::string manifest = (out / "manifest.tsv").string();

    CHECK(validate_manifest(manifest).empty());

    // delete one frame: exactly one violation naming it
    Manifest m = read_manifest(manifest);
    const auto& seg = m.patients[0].lesions[0].segments[0];
    const fs::path victim = out / seg.rel_path / "frame_000002.ppm";
    REQUIRE(fs::exists(victim));
    fs::remove(victim);
    auto violations = validate_manifest(manifest);
    REQUIRE(violations.size() == 1);
    CHECK(violations[0].find("missing file") != std::string::npos);
    CHECK(violations[0].find("frame_000002.ppm") != std::string::npos);

    // restore, then inject a duplicate lesion id under another patient
    write_ppm(Image(cfg.frame_width, cfg.frame_height), victim.string());
    CHECK(validate_manifest(manifest).empty());
    {
        std::ifstream in(manifest);
        std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        in.close();
        const std::string dup = "P999\ttrain\t" + m.patients[0].lesions[0].lesion_id +
                                "\tbenign\tgrayscale\t4\t1\t" + seg.rel_path + "\n";
        std::ofstream outf(manifest, std::ios::app);
        outf << dup;
    }
    violations = validate_manifest(manifest);
    bool found = false;
    for (const auto& v : violations)
        if (v.find("duplicate lesion id") != std::string::npos) found = true;
    CHECK(found);
    fs::remove_all(out);
}

TEST_CASE("temporal_only datasets separate classes only through frame order") {
    const fs::path out = fs::temp_directory_path() / "ebus3d_synth_temporal";
    fs::remove_all(out);
    SynthConfig cfg = tiny_config(out.string());
    cfg.patients = 6;
    cfg.lesions_per_patient_min = 2;
    cfg.lesions_per_patient_max = 2;
    cfg.frame_width = 64;
    cfg.frame_height = 48;
    cfg.p_doppler = 0.0;
    cfg.p_elasto = 0.0;
    cfg.signal = ClassSignal::temporal_only;
    Manifest m = generate_dataset(cfg);

    // per-lesion frame-mean sequences, standardized so geometry drops out
    auto normalized_means = [](const VideoSegment& seg) {
        std::vector<double> means;
        for (const auto& f : seg.frames) {
            double s = 0;
            for (float x : f.px) s += x;
            means.push_back(s / static_cast<double>(f.px.size()));
        }
        double mu = 0, sd = 0;
        for (double v : means) mu += v;
        mu /= static_cast<double>(means.size());
        for (double v : means) sd += (v - mu) * (v - mu);
        sd = std::sqrt(sd / static_cast<double>(means.size()));
        for (auto& v : means) v = (v - mu) / sd;
        return means;
    };

    std::vector<double> benign_steps, malignant_steps;
    std::vector<std::vector<double>> benign_sorted, malignant_sorted;
    for (const auto& p : m.patients) {
        for (const auto& l : p.lesions) {
            auto seg = load_segment(m, p, l, *l.segment(Mode::grayscale));
            auto means = normalized_means(seg);
            double step = 0;
            for (std::size_t i = 1; i < means.size(); ++i)
                step += std::abs(means[i] - means[i - 1]);
            step /= static_cast<double>(means.size() - 1);
            std::sort(means.begin(), means.end());
            if (l.label == 1) {
                malignant_steps.push_back(step);
                malignant_sorted.push_back(means);
            } else {
                benign_steps.push_back(step);
                benign_sorted.push_back(means);
            }
        }
    }
    REQUIRE_FALSE(benign_steps.empty());
    REQUIRE_FALSE(malignant_steps.empty());

    // frame order: malignant sequences jump, benign ones glide
    const double worst_malignant = *std::min_element(malignant_steps.begin(), malignant_steps.end());
    const double worst_benign = *std::max_element(benign_steps.begin(), benign_steps.end());
    CHECK(worst_malignant > 3.0 * worst_benign);

    // single frames: the standardized brightness multisets coincide across
    // classes, so a frame in isolation says nothing about the label
    for (const auto& b : benign_sorted) {
        for (const auto& mal : malignant_sorted) {
            double max_gap = 0;
            for (std::size_t i = 0; i < b.size() && i < mal.size(); ++i)
                max_gap = std::max(max_gap, std::abs(b[i] - mal[i]));
            CHECK(max_gap < 0.25);  // same sine multiset up to texture noise
        }
    }

    // the 4 Hz grid requirement is enforced
    SynthConfig bad = cfg;
    bad.fps = 8.0;
    CHECK_THROWS_AS(generate_dataset(bad), std::invalid_argument);
    fs::remove_all(out);
}
