#include "cft/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

namespace cft {

namespace {

double center_distance_2d(const DetectionBox& a, const DetectionBox& b) {
    return std::hypot(a.center[0] - b.center[0], a.center[1] - b.center[1]);
}

}  // namespace

std::vector<Match> match_class(const std::vector<SceneRecord>& scenes, int class_id, double threshold_m) {
    std::vector<Match> all;
    for (size_t s = 0; s < scenes.size(); ++s) {
        const auto& preds = scenes[s].predictions;
        for (size_t p = 0; p < preds.size(); ++p) {
            if (preds[p].class_id != class_id) continue;
            Match m;
            m.scene = static_cast<int64_t>(s);
            m.pred_index = static_cast<int64_t>(p);
            m.score = preds[p].score;
            all.push_back(m);
        }
    }
    std::stable_sort(all.begin(), all.end(), [](const Match& a, const Match& b) { return a.score > b.score; });
    std::vector<std::vector<uint8_t>> taken(scenes.size());
    for (size_t s = 0; s < scenes.size(); ++s) taken[s].assign(scenes[s].ground_truth.size(), 0);
    for (Match& m : all) {
        const auto& scene = scenes[static_cast<size_t>(m.scene)];
        const auto& pred = scene.predictions[static_cast<size_t>(m.pred_index)];
        double best = threshold_m;
        int64_t best_gt = -1;
        for (size_t g = 0; g < scene.ground_truth.size(); ++g) {
            if (taken[static_cast<size_t>(m.scene)][g]) continue;
            if (scene.ground_truth[g].class_id != class_id) continue;
            const double d = center_distance_2d(pred, scene.ground_truth[g]);
            if (d <= best) {
                best = d;
                best_gt = static_cast<int64_t>(g);
            }
        }
        if (best_gt >= 0) {
            taken[static_cast<size_t>(m.scene)][static_cast<size_t>(best_gt)] = 1;
            m.gt_index = best_gt;
            m.distance = best;
        }
    }
    return all;
}

namespace {

// Precision of the raw staircase at recall r: linear between knots, the last
// point wins on duplicated recall values, first precision below the first
// knot, zero beyond the maximum achieved recall.
double precision_at_recall(const std::vector<double>& rec, const std::vector<double>& prec, double r) {
    constexpr double kEps = 1e-12;
    if (r <= rec.front() + kEps) {
        if (r < rec.front() - kEps) return prec.front();
        size_t j = 0;
        while (j + 1 < rec.size() && rec[j + 1] <= r + kEps) ++j;
        return prec[j];
    }
    if (r > rec.back() + kEps) return 0.0;
    size_t hi = static_cast<size_t>(std::lower_bound(rec.begin(), rec.end(), r - kEps) - rec.begin());
    if (std::fabs(rec[hi] - r) <= kEps) {
        while (hi + 1 < rec.size() && std::fabs(rec[hi + 1] - r) <= kEps) ++hi;
        return prec[hi];
    }
    const double t = (r - rec[hi - 1]) / (rec[hi] - rec[hi - 1]);
    return prec[hi - 1] + t * (prec[hi] - prec[hi - 1]);
}

}  // namespace

double average_precision(const std::vector<Match>& matches, int64_t n_gt) {
    if (n_gt <= 0) throw TensorError("average_precision: no ground truth for this class");
    if (matches.empty()) return 0.0;
    // raw precision/recall points along descending score
    std::vector<double> rec, prec;
    int64_t tp = 0, fp = 0;
    for (const Match& m : matches) {
        if (m.gt_index >= 0)
            ++tp;
        else
            ++fp;
        rec.push_back(static_cast<double>(tp) / static_cast<double>(n_gt));
        prec.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    }
    // mean clipped precision over the 90 recall levels 0.11 .. 1.00
    constexpr double kMinPrecision = 0.1;
    double acc = 0.0;
    int count = 0;
    for (int i = 11; i <= 100; ++i) {
        const double p = precision_at_recall(rec, prec, static_cast<double>(i) / 100.0);
        acc += std::max(p - kMinPrecision, 0.0);
        ++count;
    }
    return acc / static_cast<double>(count) / (1.0 - kMinPrecision);
}

TpErrors tp_errors(const std::vector<Match>& matches, const std::vector<SceneRecord>& scenes, int class_id) {
    TpErrors e;
    double ate = 0.0, ase = 0.0, aoe = 0.0, ave = 0.0, correct_attr = 0.0;
    for (const Match& m : matches) {
        if (m.gt_index < 0) continue;
        const auto& pred = scenes[static_cast<size_t>(m.scene)].predictions[static_cast<size_t>(m.pred_index)];
        const auto& gt = scenes[static_cast<size_t>(m.scene)].ground_truth[static_cast<size_t>(m.gt_index)];
        if (gt.class_id != class_id) continue;
        ++e.n_tp;
        ate += m.distance;
        // aligned IoU: same center and orientation, intersection over union of volumes
        double inter = 1.0, va = 1.0, vb = 1.0;
        for (int d = 0; d < 3; ++d) {
            inter *= std::min(pred.size[static_cast<size_t>(d)], gt.size[static_cast<size_t>(d)]);
            va *= pred.size[static_cast<size_t>(d)];
            vb *= gt.size[static_cast<size_t>(d)];
        }
        ase += 1.0 - inter / (va + vb - inter);
        aoe += std::fabs(std::remainder(pred.yaw - gt.yaw, 2.0 * M_PI));
        ave += std::hypot(pred.velocity[0] - gt.velocity[0], pred.velocity[1] - gt.velocity[1]);
        correct_attr += (pred.moving() == gt.moving()) ? 1.0 : 0.0;
    }
    if (e.n_tp > 0) {
        const double n = static_cast<double>(e.n_tp);
        e.ate = ate / n;
        e.ase = ase / n;
        e.aoe = aoe / n;
        e.ave = ave / n;
        e.aae = 1.0 - correct_attr / n;
    }
    return e;
}

double nds(double mean_ap, double mate, double mase, double maoe, double mave, double maae) {
    const double tp_sum = std::max(1.0 - mate, 0.0) + std::max(1.0 - mase, 0.0) + std::max(1.0 - maoe, 0.0) +
                          std::max(1.0 - mave, 0.0) + std::max(1.0 - maae, 0.0);
    return (5.0 * mean_ap + tp_sum) / 10.0;
}

MetricsReport evaluate_detections(const std::vector<SceneRecord>& scenes, const MetricsConfig& cfg) {
    MetricsReport report;
    double ap_sum = 0.0, ate = 0.0, ase = 0.0, aoe = 0.0, ave = 0.0, aae = 0.0;
    int64_t classes_with_gt = 0;
    for (int c = 0; c < cfg.n_classes; ++c) {
        ClassReport cr;
        cr.class_id = c;
        for (const auto& s : scenes)
            for (const auto& g : s.ground_truth)
                if (g.class_id == c) ++cr.n_gt;
        if (cr.n_gt == 0) {
            // class absent from the ground truth: excluded from every mean
            report.per_class.push_back(cr);
            continue;
        }
        ++classes_with_gt;
        double class_ap = 0.0;
        for (double th : cfg.ap_thresholds) {
            auto matches = match_class(scenes, c, th);
            class_ap += average_precision(matches, cr.n_gt);
        }
        cr.ap = class_ap / static_cast<double>(cfg.ap_thresholds.size());
        cr.errors = tp_errors(match_class(scenes, c, cfg.tp_threshold), scenes, c);
        ap_sum += cr.ap;
        ate += cr.errors.ate;
        ase += cr.errors.ase;
        aoe += cr.errors.aoe;
        ave += cr.errors.ave;
        aae += cr.errors.aae;
        report.per_class.push_back(cr);
    }
    if (classes_with_gt > 0) {
        const double n = static_cast<double>(classes_with_gt);
        report.mean_ap = ap_sum / n;
        report.mate = ate / n;
        report.mase = ase / n;
        report.maoe = aoe / n;
        report.mave = ave / n;
        report.maae = aae / n;
    }
    report.nds = nds(report.mean_ap, report.mate, report.mase, report.maoe, report.mave, report.maae);
    return report;
}

std::string MetricsReport::to_json() const {
    nlohmann::json j;
    j["mAP"] = mean_ap;
    j["mATE"] = mate;
    j["mASE"] = mase;
    j["mAOE"] = maoe;
    j["mAVE"] = mave;
    j["mAAE"] = maae;
    j["NDS"] = nds;
    nlohmann::json classes = nlohmann::json::array();
    for (const auto& c : per_class) {
        nlohmann::json cj;
        cj["class_id"] = c.class_id;
        cj["n_gt"] = c.n_gt;
        cj["AP"] = c.ap;
        cj["ATE"] = c.errors.ate;
        cj["ASE"] = c.errors.ase;
        cj["AOE"] = c.errors.aoe;
        cj["AVE"] = c.errors.ave;
        cj["AAE"] = c.errors.aae;
        cj["n_tp"] = c.errors.n_tp;
        classes.push_back(cj);
    }
    j["per_class"] = classes;
    return j.dump(2);
}

std::string MetricsReport::to_table() const {
    std::ostringstream os;
    char line[160];
    std::snprintf(line, sizeof(line), "%-12s %8s %8s %8s %8s %8s %8s\n", "class", "AP", "ATE", "ASE", "AOE", "AVE",
                  "AAE");
    os << line;
    const auto& names = default_classes();
    for (const auto& c : per_class) {
        const std::string name =
            c.class_id < static_cast<int>(names.size()) ? names[static_cast<size_t>(c.class_id)].name : "?";
        if (c.n_gt == 0) {
            std::snprintf(line, sizeof(line), "%-12s %8s (no ground truth)\n", name.c_str(), "-");
            os << line;
            continue;
        }
        std::snprintf(line, sizeof(line), "%-12s %8.4f %8.4f %8.4f %8.4f %8.4f %8.4f\n", name.c_str(), c.ap,
                      c.errors.ate, c.errors.ase, c.errors.aoe, c.errors.ave, c.errors.aae);
        os << line;
    }
    std::snprintf(line, sizeof(line), "%-12s %8.4f  mATE %.4f  mASE %.4f  mAOE %.4f  mAVE %.4f  mAAE %.4f\n", "mAP",
                  mean_ap, mate, mase, maoe, mave, maae);
    os << line;
    std::snprintf(line, sizeof(line), "%-12s %8.4f\n", "NDS", nds);
    os << line;
    return os.str();
}

}  // namespace cft
