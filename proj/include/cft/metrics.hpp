#pragma once

#include <string>
#include <vector>

#include "cft/box.hpp"

namespace cft {

struct MetricsConfig {
    std::vector<double> ap_thresholds = {0.5, 1.0, 2.0, 4.0};  // meters
    double tp_threshold = 2.0;                                 // matches used for the error metrics
    int n_classes = 3;
};

// Predictions and ground truths for one evaluated scene.
struct SceneRecord {
    std::vector<DetectionBox> predictions;
    std::vector<DetectionBox> ground_truth;
};

struct Match {
    int64_t scene = 0;
    int64_t pred_index = 0;
    int64_t gt_index = -1;  // -1 = false positive
    double score = 0.0;
    double distance = 0.0;
};

// Greedy matching in descending score order: a prediction takes the nearest
// still-unmatched ground truth of its class within the distance threshold.
std::vector<Match> match_class(const std::vector<SceneRecord>& scenes, int class_id, double threshold_m);

// Area under the clipped precision-recall curve: precision interpolated at
// 101 recall levels, entries below recall 0.1 dropped, precision shifted down
// by 0.1, clipped at 0 and renormalized.
double average_precision(const std::vector<Match>& matches, int64_t n_gt);

struct TpErrors {
    double ate = 1.0;  // mean 2D center distance
    double ase = 1.0;  // 1 - IoU of centered, axis-aligned boxes
    double aoe = 1.0;  // mean smallest yaw difference
    double ave = 1.0;  // mean velocity L2 error
    double aae = 1.0;  // 1 - moving/static attribute accuracy
    int64_t n_tp = 0;
};

TpErrors tp_errors(const std::vector<Match>& matches, const std::vector<SceneRecord>& scenes, int class_id);

struct ClassReport {
    int class_id = 0;
    int64_t n_gt = 0;
    double ap = 0.0;  // mean over thresholds
    TpErrors errors;
};

struct MetricsReport {
    double mean_ap = 0.0;
    double mate = 1.0, mase = 1.0, maoe = 1.0, mave = 1.0, maae = 1.0;
    double nds = 0.0;
    std::vector<ClassReport> per_class;

    std::string to_json() const;
    std::string to_table() const;
};

// nds = (5 mAP + sum over the five errors of max(1 - err, 0)) / 10
double nds(double mean_ap, double mate, double mase, double maoe, double mave, double maae);

MetricsReport evaluate_detections(const std::vector<SceneRecord>& scenes, const MetricsConfig& cfg);

}  // namespace cft
