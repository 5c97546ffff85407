#include "cft/harness.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "cft/nn.hpp"

namespace cft {

RunConfig RunConfig::desk_default() {
    RunConfig cfg;
    cfg.model.views = 6;
    cfg.model.image_size = 64;
    cfg.model.backbone_widths = {8, 16, 32};
    cfg.model.backbone_strides = {2, 2, 1};
    cfg.model.bev.grid_h = 16;
    cfg.model.bev.grid_w = 16;
    cfg.model.bev.pos_channels = 32;
    cfg.model.bev.content_channels = 32;
    cfg.model.bev.x_range = {-12.8, 12.8};
    cfg.model.bev.y_range = {-12.8, 12.8};
    cfg.model.bev.z_range = {-3.0, 5.0};
    cfg.model.image_pos_channels = 16;
    cfg.model.stack = {1, 2, 4, 8};
    cfg.model.design = PaDesign::kExplicit;
    cfg.model.scheme = SchemeKind::kRec2x2;
    cfg.head.n_classes = static_cast<int64_t>(default_classes().size());
    cfg.scene.bev = cfg.model.bev;
    cfg.scene.image_size = cfg.model.image_size;
    cfg.metrics.n_classes = static_cast<int>(cfg.head.n_classes);
    return cfg;
}

void RunConfig::validate() const {
    model.validate();
    if (scene.bev.grid_h != model.bev.grid_h || scene.bev.grid_w != model.bev.grid_w)
        throw TensorError("RunConfig: scene and model BEV grids differ");
    if (scene.image_size != model.image_size) throw TensorError("RunConfig: scene and model image sizes differ");
    if (train.epochs <= 0 || train.train_scenes <= 0 || train.eval_scenes <= 0)
        throw TensorError("RunConfig: training budget must be positive");
}

namespace {

nlohmann::json range_json(const Range& r) { return {r.min, r.max}; }
Range range_from(const nlohmann::json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

}  // namespace

std::string run_config_to_json(const RunConfig& cfg) {
    nlohmann::json j;
    j["seed"] = cfg.seed;
    auto& m = j["model"];
    m["views"] = cfg.model.views;
    m["image_size"] = cfg.model.image_size;
    m["backbone_widths"] = cfg.model.backbone_widths;
    m["backbone_strides"] = cfg.model.backbone_strides;
    m["grid_h"] = cfg.model.bev.grid_h;
    m["grid_w"] = cfg.model.bev.grid_w;
    m["pos_channels"] = cfg.model.bev.pos_channels;
    m["content_channels"] = cfg.model.bev.content_channels;
    m["x_range"] = range_json(cfg.model.bev.x_range);
    m["y_range"] = range_json(cfg.model.bev.y_range);
    m["z_range"] = range_json(cfg.model.bev.z_range);
    m["image_pos_channels"] = cfg.model.image_pos_channels;
    m["n_self"] = cfg.model.stack.n_self;
    m["n_cross"] = cfg.model.stack.n_cross;
    m["heads"] = cfg.model.stack.heads;
    m["head_dim"] = cfg.model.stack.head_dim;
    m["design"] = pa_design_name(cfg.model.design);
    m["scheme"] = scheme_name(cfg.model.scheme);
    auto& h = j["head"];
    h["mid_channels"] = cfg.head.mid_channels;
    h["n_classes"] = cfg.head.n_classes;
    h["top_k"] = cfg.head.top_k;
    h["score_threshold"] = cfg.head.score_threshold;
    h["nms_radius"] = cfg.head.nms_radius;
    h["nms_class_scales"] = cfg.head.nms_class_scales;
    auto& s = j["scene"];
    s["min_objects"] = cfg.scene.min_objects;
    s["max_objects"] = cfg.scene.max_objects;
    s["border_margin"] = cfg.scene.border_margin;
    s["min_range"] = cfg.scene.min_range;
    s["min_separation"] = cfg.scene.min_separation;
    s["z_min"] = cfg.scene.z_min;
    s["z_max"] = cfg.scene.z_max;
    s["max_speed"] = cfg.scene.max_speed;
    s["p_static"] = cfg.scene.p_static;
    auto& t = j["train"];
    t["epochs"] = cfg.train.epochs;
    t["train_scenes"] = cfg.train.train_scenes;
    t["eval_scenes"] = cfg.train.eval_scenes;
    t["lr"] = cfg.train.lr;
    t["weight_decay"] = cfg.train.weight_decay;
    t["drop1_frac"] = cfg.train.drop1_frac;
    t["drop2_frac"] = cfg.train.drop2_frac;
    t["drop_factor"] = cfg.train.drop_factor;
    return j.dump(2);
}

RunConfig run_config_from_json(const std::string& text) {
    RunConfig cfg = RunConfig::desk_default();
    nlohmann::json j = nlohmann::json::parse(text);
    if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
    if (j.contains("model")) {
        const auto& m = j["model"];
        if (m.contains("views")) cfg.model.views = m["views"].get<int64_t>();
        if (m.contains("image_size")) cfg.model.image_size = m["image_size"].get<int64_t>();
        if (m.contains("backbone_widths")) cfg.model.backbone_widths = m["backbone_widths"].get<std::vector<int64_t>>();
        if (m.contains("backbone_strides")) cfg.model.backbone_strides = m["backbone_strides"].get<std::vector<int>>();
        if (m.contains("grid_h")) cfg.model.bev.grid_h = m["grid_h"].get<int64_t>();
        if (m.contains("grid_w")) cfg.model.bev.grid_w = m["grid_w"].get<int64_t>();
        if (m.contains("pos_channels")) cfg.model.bev.pos_channels = m["pos_channels"].get<int64_t>();
        if (m.contains("content_channels")) cfg.model.bev.content_channels = m["content_channels"].get<int64_t>();
        if (m.contains("x_range")) cfg.model.bev.x_range = range_from(m["x_range"]);
        if (m.contains("y_range")) cfg.model.bev.y_range = range_from(m["y_range"]);
        if (m.contains("z_range")) cfg.model.bev.z_range = range_from(m["z_range"]);
        if (m.contains("image_pos_channels")) cfg.model.image_pos_channels = m["image_pos_channels"].get<int64_t>();
        if (m.contains("n_self")) cfg.model.stack.n_self = m["n_self"].get<int>();
        if (m.contains("n_cross")) cfg.model.stack.n_cross = m["n_cross"].get<int>();
        if (m.contains("heads")) cfg.model.stack.heads = m["heads"].get<int>();
        if (m.contains("head_dim")) cfg.model.stack.head_dim = m["head_dim"].get<int>();
        if (m.contains("design")) cfg.model.design = pa_design_from_name(m["design"].get<std::string>());
        if (m.contains("scheme")) cfg.model.scheme = scheme_from_name(m["scheme"].get<std::string>());
    }
    if (j.contains("head")) {
        const auto& h = j["head"];
        if (h.contains("mid_channels")) cfg.head.mid_channels = h["mid_channels"].get<int64_t>();
        if (h.contains("n_classes")) cfg.head.n_classes = h["n_classes"].get<int64_t>();
        if (h.contains("top_k")) cfg.head.top_k = h["top_k"].get<int64_t>();
        if (h.contains("score_threshold")) cfg.head.score_threshold = h["score_threshold"].get<double>();
        if (h.contains("nms_radius")) cfg.head.nms_radius = h["nms_radius"].get<double>();
        if (h.contains("nms_class_scales"))
            cfg.head.nms_class_scales = h["nms_class_scales"].get<std::vector<double>>();
    }
    if (j.contains("scene")) {
        const auto& s = j["scene"];
        if (s.contains("min_objects")) cfg.scene.min_objects = s["min_objects"].get<int64_t>();
        if (s.contains("max_objects")) cfg.scene.max_objects = s["max_objects"].get<int64_t>();
        if (s.contains("border_margin")) cfg.scene.border_margin = s["border_margin"].get<double>();
        if (s.contains("min_range")) cfg.scene.min_range = s["min_range"].get<double>();
        if (s.contains("min_separation")) cfg.scene.min_separation = s["min_separation"].get<double>();
        if (s.contains("z_min")) cfg.scene.z_min = s["z_min"].get<double>();
        if (s.contains("z_max")) cfg.scene.z_max = s["z_max"].get<double>();
        if (s.contains("max_speed")) cfg.scene.max_speed = s["max_speed"].get<double>();
        if (s.contains("p_static")) cfg.scene.p_static = s["p_static"].get<double>();
    }
    if (j.contains("train")) {
        const auto& t = j["train"];
        if (t.contains("epochs")) cfg.train.epochs = t["epochs"].get<int>();
        if (t.contains("train_scenes")) cfg.train.train_scenes = t["train_scenes"].get<int64_t>();
        if (t.contains("eval_scenes")) cfg.train.eval_scenes = t["eval_scenes"].get<int64_t>();
        if (t.contains("lr")) cfg.train.lr = t["lr"].get<double>();
        if (t.contains("weight_decay")) cfg.train.weight_decay = t["weight_decay"].get<double>();
        if (t.contains("drop1_frac")) cfg.train.drop1_frac = t["drop1_frac"].get<double>();
        if (t.contains("drop2_frac")) cfg.train.drop2_frac = t["drop2_frac"].get<double>();
        if (t.contains("drop_factor")) cfg.train.drop_factor = t["drop_factor"].get<double>();
    }
    cfg.scene.bev = cfg.model.bev;
    cfg.scene.image_size = cfg.model.image_size;
    cfg.metrics.n_classes = static_cast<int>(cfg.head.n_classes);
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw TensorError("cannot open config: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return run_config_from_json(ss.str());
}

void save_run_config(const RunConfig& cfg, const std::string& path) { write_text_file(path, run_config_to_json(cfg)); }

CftDetector::CftDetector(const RunConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(cfg.seed);
    model_.emplace(cfg.model, params_, rng);
    head_ = DetHeadParams(params_, "head", cfg.model.bev.content_channels, cfg.head, rng);
}

CftDetector::Losses CftDetector::losses(const SceneSample& scene) const {
    ModelForward fwd = model_->forward(scene.images);
    HeadOutput out = upsample_and_predict(fwd.bev_features, head_, cfg_.head, cfg_.model.bev.grid_h,
                                          cfg_.model.bev.grid_w);
    TargetMaps targets = make_targets(scene.boxes, cfg_.model.bev, cfg_.head);
    Losses l;
    l.focal = focal_loss(out.heatmap, targets);
    l.reg = reg_l1_loss(out.regression, targets);
    l.height = fwd.bev.ref_height.defined()
                   ? height_loss(fwd.bev.ref_height, scene.boxes, cfg_.model.bev, cfg_.model.design)
                   : Tensor::scalar(0.0);
    l.total = add(add(l.focal, l.reg), l.height);
    return l;
}

HeadOutput CftDetector::predict(const Tensor& images) const {
    ModelForward fwd = model_->forward(images);
    return upsample_and_predict(fwd.bev_features, head_, cfg_.head, cfg_.model.bev.grid_h, cfg_.model.bev.grid_w);
}

std::vector<DetectionBox> CftDetector::detect(const SceneSample& scene) const {
    NoGradGuard off;
    return decode(predict(scene.images), cfg_.model.bev, cfg_.head);
}

BaselineDetector::BaselineDetector(const RunConfig& cfg, const CameraRig& rig, double z_fixed)
    : cfg_(cfg), rig_(rig), z_fixed_(z_fixed) {
    Rng rng(cfg.seed);
    conv_ = BaselineParams(params_, "baseline", 3, cfg.model.bev.content_channels, rng);
    head_ = DetHeadParams(params_, "head", cfg.model.bev.content_channels, cfg.head, rng);
}

BaselineDetector::Losses BaselineDetector::losses(const SceneSample& scene) const {
    Tensor raw = projection_baseline_features(scene, rig_, cfg_.model.bev, z_fixed_);
    Tensor feats = conv_(raw, cfg_.model.bev.grid_h, cfg_.model.bev.grid_w);
    HeadOutput out = upsample_and_predict(feats, head_, cfg_.head, cfg_.model.bev.grid_h, cfg_.model.bev.grid_w);
    TargetMaps targets = make_targets(scene.boxes, cfg_.model.bev, cfg_.head);
    Losses l;
    l.focal = focal_loss(out.heatmap, targets);
    l.reg = reg_l1_loss(out.regression, targets);
    l.total = add(l.focal, l.reg);
    return l;
}

std::vector<DetectionBox> BaselineDetector::detect(const SceneSample& scene, const CameraRig* rig_override) const {
    NoGradGuard off;
    const CameraRig& rig = rig_override ? *rig_override : rig_;
    Tensor raw = projection_baseline_features(scene, rig, cfg_.model.bev, z_fixed_);
    Tensor feats = conv_(raw, cfg_.model.bev.grid_h, cfg_.model.bev.grid_w);
    HeadOutput out = upsample_and_predict(feats, head_, cfg_.head, cfg_.model.bev.grid_h, cfg_.model.bev.grid_w);
    return decode(out, cfg_.model.bev, cfg_.head);
}

std::vector<SceneSample> generate_dataset(uint64_t base_seed, int64_t count, const SceneConfig& cfg,
                                          const CameraRig& rig) {
    std::vector<SceneSample> scenes;
    scenes.reserve(static_cast<size_t>(count));
    for (int64_t i = 0; i < count; ++i) scenes.push_back(generate_scene(base_seed * 1000003ULL + i, cfg, rig));
    return scenes;
}

std::string TrainResult::loss_csv() const {
    std::ostringstream os;
    os << "epoch,total,focal,reg,height\n";
    for (size_t e = 0; e < epochs.size(); ++e)
        os << e << "," << epochs[e].total << "," << epochs[e].focal << "," << epochs[e].reg << ","
           << epochs[e].height << "\n";
    return os.str();
}

namespace {

double schedule_lr(const TrainConfig& tcfg, int epoch) {
    const double frac = (static_cast<double>(epoch) + 1.0) / static_cast<double>(tcfg.epochs);
    double lr = tcfg.lr;
    if (frac > tcfg.drop1_frac) lr *= tcfg.drop_factor;
    if (frac > tcfg.drop2_frac) lr *= tcfg.drop_factor;
    return lr;
}

template <class LossFn>
TrainResult train_loop(ParamSet& params, const std::vector<SceneSample>& scenes, const TrainConfig& tcfg,
                       LossFn&& scene_loss) {
    TrainResult result;
    AdamW opt(params, {tcfg.lr, 0.9, 0.999, 1e-8, tcfg.weight_decay});
    for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
        opt.set_lr(schedule_lr(tcfg, epoch));
        EpochLoss acc;
        for (size_t i = 0; i < scenes.size(); ++i) {
            params.zero_grads();
            try {
                EpochLoss step = scene_loss(scenes[i]);
                acc.total += step.total;
                acc.focal += step.focal;
                acc.reg += step.reg;
                acc.height += step.height;
            } catch (const TensorError& e) {
                throw TensorError("training diverged at epoch " + std::to_string(epoch) + ", scene " +
                                  std::to_string(i) + ": " + e.what());
            }
            opt.step();
        }
        const double n = static_cast<double>(scenes.size());
        result.epochs.push_back({acc.total / n, acc.focal / n, acc.reg / n, acc.height / n});
    }
    return result;
}

}  // namespace

TrainResult train(CftDetector& det, const std::vector<SceneSample>& scenes, const TrainConfig& tcfg) {
    return train_loop(det.params(), scenes, tcfg, [&](const SceneSample& scene) {
        CftDetector::Losses l = det.losses(scene);
        backward(l.total);
        return EpochLoss{l.total.item(), l.focal.item(), l.reg.item(), l.height.item()};
    });
}

TrainResult train_baseline(BaselineDetector& det, const std::vector<SceneSample>& scenes, const TrainConfig& tcfg) {
    return train_loop(det.params(), scenes, tcfg, [&](const SceneSample& scene) {
        BaselineDetector::Losses l = det.losses(scene);
        backward(l.total);
        return EpochLoss{l.total.item(), l.focal.item(), l.reg.item(), 0.0};
    });
}

MetricsReport evaluate_detector(const CftDetector& det, const std::vector<SceneSample>& scenes,
                                std::vector<SceneRecord>* records_out) {
    std::vector<SceneRecord> records;
    for (const auto& scene : scenes) records.push_back({det.detect(scene), scene.boxes});
    MetricsReport report = evaluate_detections(records, det.config().metrics);
    if (records_out) *records_out = std::move(records);
    return report;
}

MetricsReport evaluate_baseline(const BaselineDetector& det, const std::vector<SceneSample>& scenes,
                                const CameraRig* rig_override, std::vector<SceneRecord>* records_out) {
    std::vector<SceneRecord> records;
    for (const auto& scene : scenes) records.push_back({det.detect(scene, rig_override), scene.boxes});
    MetricsReport report = evaluate_detections(records, det.config().metrics);
    if (records_out) *records_out = std::move(records);
    return report;
}

std::string detections_to_json(const std::vector<SceneRecord>& records) {
    nlohmann::json scenes = nlohmann::json::array();
    for (const auto& rec : records) {
        nlohmann::json preds = nlohmann::json::array();
        for (const auto& b : rec.predictions) {
            preds.push_back({{"center", b.center},
                             {"size", b.size},
                             {"yaw", b.yaw},
                             {"velocity", b.velocity},
                             {"class_id", b.class_id},
                             {"score", b.score}});
        }
        scenes.push_back({{"detections", preds}});
    }
    return nlohmann::json{{"scenes", scenes}}.dump(2);
}

// --- experiments --------------------------------------------------------------

namespace {

void run_jobs(std::vector<std::function<void()>>& jobs, int threads) {
    if (threads <= 1) {
        for (auto& job : jobs) job();
        return;
    }
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    const int n = std::min<int>(threads, static_cast<int>(jobs.size()));
    for (int t = 0; t < n; ++t)
        pool.emplace_back([&] {
            for (;;) {
                const size_t i = next.fetch_add(1);
                if (i >= jobs.size()) return;
                jobs[i]();
            }
        });
    for (auto& th : pool) th.join();
}

uint64_t run_seed(uint64_t base, int index) { return base + 7919ULL * static_cast<uint64_t>(index); }

std::string cells_csv(const std::vector<ExperimentCell>& cells) {
    std::ostringstream os;
    os << "label,seed,nds,map,mate,mase,maoe,mave,maae\n";
    for (const auto& c : cells)
        os << c.label << "," << c.seed << "," << c.report.nds << "," << c.report.mean_ap << "," << c.report.mate
           << "," << c.report.mase << "," << c.report.maoe << "," << c.report.mave << "," << c.report.maae << "\n";
    return os.str();
}

nlohmann::json cell_json(const ExperimentCell& c) {
    return {{"label", c.label}, {"seed", c.seed},          {"nds", c.report.nds},   {"map", c.report.mean_ap},
            {"mate", c.report.mate}, {"mase", c.report.mase}, {"maoe", c.report.maoe}, {"mave", c.report.mave},
            {"maae", c.report.maae}};
}

struct Aggregate {
    double mean = 0.0;
    double stddev = 0.0;
};

Aggregate aggregate_scores(const std::vector<double>& scores) {
    Aggregate a;
    if (scores.empty()) return a;
    for (double s : scores) a.mean += s;
    a.mean /= static_cast<double>(scores.size());
    double var = 0.0;
    for (double s : scores) var += (s - a.mean) * (s - a.mean);
    a.stddev = scores.size() > 1 ? std::sqrt(var / static_cast<double>(scores.size() - 1)) : 0.0;
    return a;
}

}  // namespace

ExperimentResult experiment_embedding(const RunConfig& base, int n_seeds, int threads) {
    if (n_seeds < 1) throw TensorError("experiment_embedding: need at least one seed");
    const std::vector<PaDesign> designs = {PaDesign::kImplicit, PaDesign::kExplicit, PaDesign::kEnhancedImplicit};
    ExperimentResult result;
    result.cells.resize(designs.size() * static_cast<size_t>(n_seeds));
    std::vector<std::function<void()>> jobs;
    for (size_t d = 0; d < designs.size(); ++d)
        for (int s = 0; s < n_seeds; ++s) {
            const size_t slot = d * static_cast<size_t>(n_seeds) + static_cast<size_t>(s);
            jobs.push_back([&, d, s, slot] {
                RunConfig cfg = base;
                cfg.model.design = designs[d];
                cfg.seed = run_seed(base.seed, s);
                const CameraRig rig = CameraRig::standard(cfg.scene.image_size);
                auto train_set = generate_dataset(cfg.seed, cfg.train.train_scenes, cfg.scene, rig);
                auto eval_set = generate_dataset(cfg.seed + 500000ULL, cfg.train.eval_scenes, cfg.scene, rig);
                CftDetector det(cfg);
                train(det, train_set, cfg.train);
                MetricsReport report = evaluate_detector(det, eval_set);
                ExperimentCell cell;
                cell.label = pa_design_name(designs[d]);
                cell.seed = cfg.seed;
                cell.score = report.nds;
                cell.report = report;
                result.cells[slot] = std::move(cell);
            });
        }
    run_jobs(jobs, threads);
    result.csv = cells_csv(result.cells);
    nlohmann::json j;
    j["cells"] = nlohmann::json::array();
    for (const auto& c : result.cells) j["cells"].push_back(cell_json(c));
    j["aggregate"] = nlohmann::json::array();
    for (size_t d = 0; d < designs.size(); ++d) {
        std::vector<double> scores;
        for (int s = 0; s < n_seeds; ++s) scores.push_back(result.cells[d * n_seeds + s].score);
        Aggregate a = aggregate_scores(scores);
        j["aggregate"].push_back(
            {{"label", pa_design_name(designs[d])}, {"mean_nds", a.mean}, {"stddev", a.stddev}, {"seeds", n_seeds}});
    }
    result.json = j.dump(2);
    return result;
}

ExperimentResult experiment_windows(const RunConfig& base, int n_seeds, int threads) {
    if (n_seeds < 1) throw TensorError("experiment_windows: need at least one seed");
    const auto& kinds = all_scheme_kinds();
    ExperimentResult result;
    result.cells.resize(kinds.size() * static_cast<size_t>(n_seeds));
    std::vector<std::function<void()>> jobs;
    for (size_t k = 0; k < kinds.size(); ++k)
        for (int s = 0; s < n_seeds; ++s) {
            const size_t slot = k * static_cast<size_t>(n_seeds) + static_cast<size_t>(s);
            jobs.push_back([&, k, s, slot] {
                RunConfig cfg = base;
                cfg.model.scheme = kinds[k];
                cfg.seed = run_seed(base.seed, s);
                const CameraRig rig = CameraRig::standard(cfg.scene.image_size);
                auto train_set = generate_dataset(cfg.seed, cfg.train.train_scenes, cfg.scene, rig);
                auto eval_set = generate_dataset(cfg.seed + 500000ULL, cfg.train.eval_scenes, cfg.scene, rig);
                CftDetector det(cfg);
                train(det, train_set, cfg.train);
                MetricsReport report = evaluate_detector(det, eval_set);
                ExperimentCell cell;
                cell.label = scheme_name(kinds[k]);
                cell.seed = cfg.seed;
                cell.score = report.nds;
                cell.report = report;
                result.cells[slot] = std::move(cell);
            });
        }
    run_jobs(jobs, threads);
    const std::vector<CostReport> costs = cost_table(base.model, base.seed);
    result.csv = cells_csv(result.cells);
    nlohmann::json j;
    j["cells"] = nlohmann::json::array();
    for (const auto& c : result.cells) j["cells"].push_back(cell_json(c));
    j["cost_table"] = nlohmann::json::array();
    for (const auto& r : costs) {
        j["cost_table"].push_back({{"scheme", scheme_name(r.kind)},
                                   {"analytic_muladds", r.analytic_muladds},
                                   {"analytic_exact_muladds", r.analytic_exact_muladds},
                                   {"measured_muladds", r.measured_muladds},
                                   {"measured_exact_muladds", r.measured_exact_muladds},
                                   {"ratio_vs_global", r.ratio_vs_global},
                                   {"pad_overhead", r.pad_overhead}});
    }
    result.json = j.dump(2);
    result.csv += "\n" + cost_table_csv(costs);
    return result;
}

ExperimentResult experiment_noise(const RunConfig& base, int n_seeds, const std::vector<double>& sigma_rot_deg,
                                  int threads) {
    if (n_seeds < 1) throw TensorError("experiment_noise: need at least one seed");
    ExperimentResult result;
    const CameraRig rig = CameraRig::standard(base.scene.image_size);

    // the transformer's inputs do not include the rig, so one training run
    // serves every noise level
    RunConfig cft_cfg = base;
    cft_cfg.seed = run_seed(base.seed, 0);
    auto cft_train_set = generate_dataset(cft_cfg.seed, cft_cfg.train.train_scenes, cft_cfg.scene, rig);
    auto eval_set = generate_dataset(cft_cfg.seed + 500000ULL, cft_cfg.train.eval_scenes, cft_cfg.scene, rig);
    CftDetector cft_det(cft_cfg);

    std::vector<std::unique_ptr<BaselineDetector>> baselines;
    std::vector<std::vector<SceneSample>> baseline_train_sets;
    for (int s = 0; s < n_seeds; ++s) {
        RunConfig bcfg = base;
        bcfg.seed = run_seed(base.seed, s);
        baselines.push_back(std::make_unique<BaselineDetector>(bcfg, rig));
        baseline_train_sets.push_back(generate_dataset(bcfg.seed, bcfg.train.train_scenes, bcfg.scene, rig));
    }

    std::vector<std::function<void()>> jobs;
    jobs.push_back([&] { train(cft_det, cft_train_set, cft_cfg.train); });
    for (int s = 0; s < n_seeds; ++s)
        jobs.push_back([&, s] { train_baseline(*baselines[static_cast<size_t>(s)], baseline_train_sets[static_cast<size_t>(s)],
                                               base.train); });
    run_jobs(jobs, threads);

    for (double sigma : sigma_rot_deg) {
        const double sigma_trans = sigma / 40.0;  // 0.1 m at the 4 degree level
        // transformer row: same images, rig never enters the model
        MetricsReport cft_report = evaluate_detector(cft_det, eval_set);
        ExperimentCell cft_cell;
        cft_cell.label = "cft_sigma_" + std::to_string(sigma);
        cft_cell.seed = cft_cfg.seed;
        cft_cell.score = cft_report.nds;
        cft_cell.report = cft_report;
        result.cells.push_back(std::move(cft_cell));
        for (int s = 0; s < n_seeds; ++s) {
            Rng noise_rng(0xABCD000 + static_cast<uint64_t>(s) * 131 + static_cast<uint64_t>(sigma * 1000.0));
            const CameraRig noisy = perturb_extrinsics(rig, sigma, sigma_trans, noise_rng);
            MetricsReport report = evaluate_baseline(*baselines[static_cast<size_t>(s)], eval_set, &noisy);
            ExperimentCell cell;
            cell.label = "baseline_sigma_" + std::to_string(sigma);
            cell.seed = baselines[static_cast<size_t>(s)]->config().seed;
            cell.score = report.nds;
            cell.report = report;
            result.cells.push_back(std::move(cell));
        }
    }
    result.csv = cells_csv(result.cells);
    nlohmann::json j;
    j["cells"] = nlohmann::json::array();
    for (const auto& c : result.cells) j["cells"].push_back(cell_json(c));
    result.json = j.dump(2);
    return result;
}

// --- dumps ---------------------------------------------------------------------

std::string dump_embeddings_csv(const CftDetector& det) {
    const RunConfig& cfg = det.config();
    if (cfg.model.design == PaDesign::kImplicit)
        throw TensorError("dump_embeddings: the implicit design has no height products to dump");
    NoGradGuard off;
    BevEmbedding bev = pa_forward(det.model().pa(), cfg.model.bev, cfg.model.design);
    const int64_t cp = cfg.model.bev.pos_channels;
    std::ostringstream os;
    os << "h,w,ref_height";
    for (int64_t c = 0; c < cp; ++c) os << ",qep_" << c;
    os << "\n";
    const auto& z = bev.ref_height.values();
    const auto& qep = bev.enhanced_pos.values();
    for (int64_t h = 0; h < cfg.model.bev.grid_h; ++h)
        for (int64_t w = 0; w < cfg.model.bev.grid_w; ++w) {
            const int64_t cell = h * cfg.model.bev.grid_w + w;
            os << h << "," << w << "," << z[static_cast<size_t>(cell)];
            for (int64_t c = 0; c < cp; ++c) os << "," << qep[static_cast<size_t>(cell * cp + c)];
            os << "\n";
        }
    return os.str();
}

std::string dump_attention_csv(const CftDetector& det, const SceneSample& scene, int64_t query_h, int64_t query_w) {
    const RunConfig& cfg = det.config();
    const WindowScheme& scheme = det.model().scheme();
    if (query_h < 0 || query_h >= cfg.model.bev.grid_h || query_w < 0 || query_w >= cfg.model.bev.grid_w)
        throw TensorError("dump_attention: query cell outside the BEV grid");
    const int64_t cell = query_h * cfg.model.bev.grid_w + query_w;
    NoGradGuard off;
    AttnCapture capture;
    det.model().forward(scene.images, PadMode::kExact, nullptr, &capture);
    const int64_t fs = cfg.model.feat_size();
    const int64_t pixels = fs * fs;
    std::ostringstream os;
    os << "layer,view,pixel_row,pixel_col,weight\n";
    const int window = scheme.assignment[static_cast<size_t>(cell)];
    for (const auto& cap : capture) {
        if (cap.window != window) continue;
        // capture order interleaves self and cross layers; cross entries have
        // BEV cells as queries
        auto it = std::find(cap.query_cells.begin(), cap.query_cells.end(), cell);
        if (it == cap.query_cells.end()) continue;
        const int64_t row = it - cap.query_cells.begin();
        const auto& group = scheme.groups[static_cast<size_t>(window)];
        if (cap.n_key != static_cast<int64_t>(group.size()) * pixels) continue;
        for (size_t g = 0; g < group.size(); ++g)
            for (int64_t p = 0; p < pixels; ++p) {
                const double wgt = cap.weights[static_cast<size_t>(row * cap.n_key + static_cast<int64_t>(g) * pixels + p)];
                os << cap.layer << "," << view_name(group[g]) << "," << p / fs << "," << p % fs << "," << wgt << "\n";
            }
    }
    return os.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw TensorError("cannot open file for writing: " + path);
    out << content;
}

}  // namespace cft
