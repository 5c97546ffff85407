#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cft/costmodel.hpp"
#include "cft/dethead.hpp"
#include "cft/metrics.hpp"
#include "cft/model.hpp"
#include "cft/scenegen.hpp"

namespace cft {

struct TrainConfig {
    int epochs = 10;
    int64_t train_scenes = 120;
    int64_t eval_scenes = 40;
    double lr = 2e-3;
    double weight_decay = 1e-4;
    // step schedule: drop the rate by drop_factor at these fractions of the run
    double drop1_frac = 20.0 / 24.0;
    double drop2_frac = 23.0 / 24.0;
    double drop_factor = 0.1;
};

struct RunConfig {
    ModelConfig model;
    DetHeadConfig head;
    SceneConfig scene;
    TrainConfig train;
    MetricsConfig metrics;
    uint64_t seed = 1;

    static RunConfig desk_default();
    void validate() const;
};

std::string run_config_to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const std::string& text);
RunConfig load_run_config(const std::string& path);  // missing keys keep defaults
void save_run_config(const RunConfig& cfg, const std::string& path);

// Full trainable pipeline: view transformer plus detection head behind one
// parameter registry.
class CftDetector {
public:
    explicit CftDetector(const RunConfig& cfg);

    struct Losses {
        Tensor total, focal, reg, height;
    };
    Losses losses(const SceneSample& scene) const;
    HeadOutput predict(const Tensor& images) const;
    std::vector<DetectionBox> detect(const SceneSample& scene) const;  // no-grad inference

    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }
    const CftModel& model() const { return *model_; }
    const RunConfig& config() const { return cfg_; }

private:
    RunConfig cfg_;
    ParamSet params_;
    std::optional<CftModel> model_;
    DetHeadParams head_;
};

// Camera-driven reference detector; consumes the rig at inference time.
class BaselineDetector {
public:
    BaselineDetector(const RunConfig& cfg, const CameraRig& rig, double z_fixed = 0.0);

    struct Losses {
        Tensor total, focal, reg;
    };
    Losses losses(const SceneSample& scene) const;
    // rig_override models evaluating under a miscalibrated rig
    std::vector<DetectionBox> detect(const SceneSample& scene, const CameraRig* rig_override = nullptr) const;

    ParamSet& params() { return params_; }
    const RunConfig& config() const { return cfg_; }

private:
    RunConfig cfg_;
    CameraRig rig_;
    double z_fixed_;
    ParamSet params_;
    BaselineParams conv_;
    DetHeadParams head_;
};

std::vector<SceneSample> generate_dataset(uint64_t base_seed, int64_t count, const SceneConfig& cfg,
                                          const CameraRig& rig);

struct EpochLoss {
    double total = 0.0, focal = 0.0, reg = 0.0, height = 0.0;
};

struct TrainResult {
    std::vector<EpochLoss> epochs;
    std::string loss_csv() const;
};

// Deterministic sequential training; aborts with a diagnostic if the loss
// stops being finite.
TrainResult train(CftDetector& det, const std::vector<SceneSample>& scenes, const TrainConfig& tcfg);
TrainResult train_baseline(BaselineDetector& det, const std::vector<SceneSample>& scenes, const TrainConfig& tcfg);

MetricsReport evaluate_detector(const CftDetector& det, const std::vector<SceneSample>& scenes,
                                std::vector<SceneRecord>* records_out = nullptr);
MetricsReport evaluate_baseline(const BaselineDetector& det, const std::vector<SceneSample>& scenes,
                                const CameraRig* rig_override = nullptr,
                                std::vector<SceneRecord>* records_out = nullptr);

std::string detections_to_json(const std::vector<SceneRecord>& records);

// --- experiments -------------------------------------------------------------

struct ExperimentCell {
    std::string label;
    uint64_t seed = 0;
    double score = 0.0;  // evaluation NDS
    MetricsReport report;
};

struct ExperimentResult {
    std::vector<ExperimentCell> cells;
    std::string csv;
    std::string json;
};

// Trains the three embedding designs under identical budgets and reports
// per-seed and aggregate scores.
ExperimentResult experiment_embedding(const RunConfig& base, int n_seeds, int threads);

// Trains one model per window scheme and attaches the cost table.
ExperimentResult experiment_windows(const RunConfig& base, int n_seeds, int threads);

// Evaluates the transformer and the projection baseline under increasing
// extrinsics noise. The transformer is trained once (its inputs cannot change
// with the rig); the baseline trains once per seed.
ExperimentResult experiment_noise(const RunConfig& base, int n_seeds, const std::vector<double>& sigma_rot_deg,
                                  int threads);

// --- dumps --------------------------------------------------------------------

// Per-grid CSV: h, w, ref_height, enhanced positional channels.
std::string dump_embeddings_csv(const CftDetector& det);

// Attention weight maps of every cross layer for one BEV query cell,
// per view of its group: layer, view, pixel row/col, weight.
std::string dump_attention_csv(const CftDetector& det, const SceneSample& scene, int64_t query_h, int64_t query_w);

void write_text_file(const std::string& path, const std::string& content);

}  // namespace cft
