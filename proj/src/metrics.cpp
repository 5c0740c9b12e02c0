#include "ebus3d/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace ebus3d {

LesionPrediction aggregate_lesion(const std::vector<SlicePrediction>& slices) {
    if (slices.empty())
        throw std::invalid_argument("aggregate_lesion: no slice predictions given");
    LesionPrediction out;
    out.lesion_id = slices.front().lesion_id;
    out.label = slices.front().label;
    double sum = 0.0;
    for (const auto& s : slices) {
        if (s.lesion_id != out.lesion_id)
            throw std::invalid_argument("aggregate_lesion: mixed lesion ids (" + out.lesion_id +
                                        " vs " + s.lesion_id + ")");
        sum += s.score;
    }
    out.slice_count = static_cast<std::int64_t>(slices.size());
    out.mean_score = sum / static_cast<double>(out.slice_count);
    return out;
}

std::vector<LesionPrediction> aggregate_by_lesion(const std::vector<SlicePrediction>& slices) {
    std::vector<std::string> order;
    for (const auto& s : slices) {
        if (std::find(order.begin(), order.end(), s.lesion_id) == order.end())
            order.push_back(s.lesion_id);
    }
    std::vector<LesionPrediction> out;
    out.reserve(order.size());
    for (const auto& id : order) {
        std::vector<SlicePrediction> group;
        for (const auto& s : slices)
            if (s.lesion_id == id) group.push_back(s);
        out.push_back(aggregate_lesion(group));
    }
    return out;
}

double accuracy(const std::vector<SlicePrediction>& preds) {
    if (preds.empty()) throw std::invalid_argument("accuracy: empty prediction list");
    std::int64_t correct = 0;
    for (const auto& p : preds)
        if (classify(p.score) == p.label) ++correct;
    return static_cast<double>(correct) / static_cast<double>(preds.size());
}

double accuracy(const std::vector<LesionPrediction>& preds) {
    if (preds.empty()) throw std::invalid_argument("accuracy: empty prediction list");
    std::int64_t correct = 0;
    for (const auto& p : preds)
        if (classify(p.mean_score) == p.label) ++correct;
    return static_cast<double>(correct) / static_cast<double>(preds.size());
}

RocCurve roc_curve(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size())
        throw std::invalid_argument("roc_curve: scores and labels differ in length");
    std::int64_t pos = 0, neg = 0;
    for (int l : labels) (l == 1 ? pos : neg)++;
    if (pos == 0 || neg == 0)
        throw std::invalid_argument("ROC undefined: both classes must be present");

    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    RocCurve curve;
    curve.points.push_back({0.0, 0.0});
    std::int64_t tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        const double thr = scores[order[i]];
        // everything tied at this score moves in one step
        while (i < order.size() && scores[order[i]] == thr) {
            (labels[order[i]] == 1 ? tp : fp)++;
            ++i;
        }
        curve.points.push_back({static_cast<double>(fp) / static_cast<double>(neg),
                                static_cast<double>(tp) / static_cast<double>(pos)});
    }
    curve.auc = auc(curve);
    return curve;
}

double auc(const RocCurve& curve) {
    double a = 0.0;
    for (std::size_t i = 1; i < curve.points.size(); ++i) {
        const auto& p0 = curve.points[i - 1];
        const auto& p1 = curve.points[i];
        a += (p1.fpr - p0.fpr) * (p1.tpr + p0.tpr) * 0.5;
    }
    return a;
}

std::vector<LesionClipCounts> apply_exclusions(const std::vector<LesionClipCounts>& lesions,
                                               Variant variant) {
    std::vector<LesionClipCounts> kept;
    for (const auto& l : lesions) {
        if (variant == Variant::U) {
            if (l.grayscale_clips > 0) kept.push_back(l);
        } else {
            if (l.grayscale_clips + l.doppler_clips > 0) kept.push_back(l);
        }
    }
    return kept;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os << "level,model,accuracy,auc,n\n";
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%s,%.6f,%.6f,%lld\n", r.level.c_str(), r.model.c_str(),
                      r.accuracy, r.auc, static_cast<long long>(r.n));
        os << buf;
    }
    if (!os) throw std::runtime_error("write failed: " + path);
}

void write_roc_csv(const std::string& path, const RocCurve& curve) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os << "fpr,tpr\n";
    char buf[80];
    for (const auto& p : curve.points) {
        std::snprintf(buf, sizeof(buf), "%.6f,%.6f\n", p.fpr, p.tpr);
        os << buf;
    }
    if (!os) throw std::runtime_error("write failed: " + path);
}

}  // namespace ebus3d
