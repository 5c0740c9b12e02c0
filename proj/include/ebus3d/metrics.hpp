#pragma once

// Slice- and lesion-level classification metrics: the strict 0.5 threshold,
// per-lesion score averaging, threshold-sweep ROC curves and trapezoidal
// AUC, plus the variant-specific lesion exclusion rule and CSV exports.

#include <cstdint>
#include <string>
#include <vector>

#include "ebus3d/nets.hpp"

namespace ebus3d {

struct SlicePrediction {
    std::string lesion_id;
    std::string patient_id;
    double score = 0.0;  // in [0,1]
    int label = 0;       // 0 benign, 1 malignant
};

struct LesionPrediction {
    std::string lesion_id;
    double mean_score = 0.0;
    std::int64_t slice_count = 0;
    int label = 0;
};

// Malignant iff score > 0.5, strictly: 0.5 itself classifies as benign.
inline int classify(double score) { return score > 0.5 ? 1 : 0; }

// Mean of one lesion's slice scores. Empty input or mixed lesion ids are
// rejected.
LesionPrediction aggregate_lesion(const std::vector<SlicePrediction>& slices);

// Groups by lesion id (first-appearance order) and aggregates each group.
std::vector<LesionPrediction> aggregate_by_lesion(const std::vector<SlicePrediction>& slices);

double accuracy(const std::vector<SlicePrediction>& preds);
double accuracy(const std::vector<LesionPrediction>& preds);

struct RocPoint {
    double fpr = 0.0;
    double tpr = 0.0;
};

struct RocCurve {
    std::vector<RocPoint> points;  // from (0,0) to (1,1) in sweep order
    double auc = 0.0;              // trapezoidal integral of the points
};

// Threshold sweep over every distinct score, descending, ties collapsed
// into one step; throws when only one class is present.
RocCurve roc_curve(const std::vector<double>& scores, const std::vector<int>& labels);

double auc(const RocCurve& curve);

// Slice availability per lesion, used by the evaluation exclusion rule.
struct LesionClipCounts {
    std::string lesion_id;
    std::int64_t grayscale_clips = 0;
    std::int64_t doppler_clips = 0;
};

// Res3D_U evaluates only lesions with at least one grayscale clip; the
// other variants keep lesions with a usable slice in any consumed mode.
std::vector<LesionClipCounts> apply_exclusions(const std::vector<LesionClipCounts>& lesions,
                                               Variant variant);

struct MetricRow {
    std::string level;  // "slice" or "lesion"
    std::string model;  // e.g. "Res3D_UDE"
    double accuracy = 0.0;
    double auc = 0.0;
    std::int64_t n = 0;
};

// header `level,model,accuracy,auc,n`
void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows);
// header `fpr,tpr`, one point per row in sweep order
void write_roc_csv(const std::string& path, const RocCurve& curve);

}  // namespace ebus3d
