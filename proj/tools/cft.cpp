// Command-line entry point: data generation, training, evaluation, the cost
// table, the three experiments, and the attention/embedding dumps.

#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "cft/harness.hpp"

namespace fs = std::filesystem;
using namespace cft;

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir = "out";
    uint64_t seed = 0;  // 0 = keep the config's seed
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "run configuration JSON");
    cmd->add_option("--out-dir", args.out_dir, "output directory");
    cmd->add_option("--seed", args.seed, "override the config seed");
}

RunConfig resolve_config(const CommonArgs& args) {
    RunConfig cfg = args.config_path.empty() ? RunConfig::desk_default() : load_run_config(args.config_path);
    if (args.seed != 0) cfg.seed = args.seed;
    cfg.validate();
    return cfg;
}

fs::path prepare_out_dir(const CommonArgs& args) {
    fs::path dir(args.out_dir);
    fs::create_directories(dir);
    return dir;
}

std::vector<SceneSample> dataset_for(const RunConfig& cfg, const std::string& data_path, int64_t count,
                                     uint64_t seed_offset) {
    if (!data_path.empty()) return load_dataset(data_path);
    const CameraRig rig = CameraRig::standard(cfg.scene.image_size);
    return generate_dataset(cfg.seed + seed_offset, count, cfg.scene, rig);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"calibration-free BEV transformer toolkit"};
    app.require_subcommand(1);

    CommonArgs gen_args;
    int64_t gen_count = 200;
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic multi-view dataset");
    add_common(gen, gen_args);
    gen->add_option("--count", gen_count, "number of scenes");

    CommonArgs train_args;
    std::string train_data;
    auto* train_cmd = app.add_subcommand("train", "train the detector");
    add_common(train_cmd, train_args);
    train_cmd->add_option("--data", train_data, "dataset file (generated on the fly when omitted)");

    CommonArgs eval_args;
    std::string eval_data, eval_ckpt;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(eval_cmd, eval_args);
    eval_cmd->add_option("--data", eval_data, "dataset file (generated on the fly when omitted)");
    eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint JSON")->required();

    CommonArgs cost_args;
    auto* cost_cmd = app.add_subcommand("cost", "analytic and instrumented attention cost table");
    add_common(cost_cmd, cost_args);

    CommonArgs embed_args;
    int embed_seeds = 3, embed_threads = static_cast<int>(std::thread::hardware_concurrency());
    auto* embed_cmd = app.add_subcommand("exp-embedding", "embedding-design ablation");
    add_common(embed_cmd, embed_args);
    embed_cmd->add_option("--seeds", embed_seeds, "seeds per design");
    embed_cmd->add_option("--threads", embed_threads, "parallel training jobs");

    CommonArgs win_args;
    int win_seeds = 1, win_threads = static_cast<int>(std::thread::hardware_concurrency());
    auto* win_cmd = app.add_subcommand("exp-windows", "window-scheme ablation with cost table");
    add_common(win_cmd, win_args);
    win_cmd->add_option("--seeds", win_seeds, "seeds per scheme");
    win_cmd->add_option("--threads", win_threads, "parallel training jobs");

    CommonArgs noise_args;
    int noise_seeds = 3, noise_threads = static_cast<int>(std::thread::hardware_concurrency());
    std::vector<double> noise_sigmas = {0.0, 0.5, 1.0, 2.0, 4.0};
    auto* noise_cmd = app.add_subcommand("exp-noise", "extrinsics-noise robustness study");
    add_common(noise_cmd, noise_args);
    noise_cmd->add_option("--seeds", noise_seeds, "baseline seeds");
    noise_cmd->add_option("--threads", noise_threads, "parallel training jobs");
    noise_cmd->add_option("--sigmas", noise_sigmas, "rotation noise levels in degrees");

    CommonArgs attn_args;
    std::string attn_ckpt;
    int64_t attn_h = -1, attn_w = -1;
    uint64_t attn_scene_seed = 42;
    auto* attn_cmd = app.add_subcommand("dump-attn", "attention weight maps for one BEV query cell");
    add_common(attn_cmd, attn_args);
    attn_cmd->add_option("--checkpoint", attn_ckpt, "checkpoint JSON");
    attn_cmd->add_option("--h", attn_h, "query cell row (default: grid center)");
    attn_cmd->add_option("--w", attn_w, "query cell column (default: grid center)");
    attn_cmd->add_option("--scene-seed", attn_scene_seed, "seed of the probed scene");

    CommonArgs dump_args;
    std::string dump_ckpt;
    auto* dump_cmd = app.add_subcommand("dump-embeddings", "per-grid reference height and enhanced embedding");
    add_common(dump_cmd, dump_args);
    dump_cmd->add_option("--checkpoint", dump_ckpt, "checkpoint JSON");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            RunConfig cfg = resolve_config(gen_args);
            fs::path dir = prepare_out_dir(gen_args);
            const CameraRig rig = CameraRig::standard(cfg.scene.image_size);
            auto scenes = generate_dataset(cfg.seed, gen_count, cfg.scene, rig);
            save_dataset((dir / "scenes.bin").string(), (dir / "manifest.json").string(), scenes, cfg.scene);
            save_run_config(cfg, (dir / "config.json").string());
            std::cout << "wrote " << scenes.size() << " scenes to " << (dir / "scenes.bin") << "\n";
        } else if (train_cmd->parsed()) {
            RunConfig cfg = resolve_config(train_args);
            fs::path dir = prepare_out_dir(train_args);
            auto scenes = dataset_for(cfg, train_data, cfg.train.train_scenes, 0);
            CftDetector det(cfg);
            TrainResult result = train(det, scenes, cfg.train);
            det.params().save((dir / "checkpoint.json").string());
            write_text_file((dir / "losses.csv").string(), result.loss_csv());
            save_run_config(cfg, (dir / "config.json").string());
            std::cout << "final loss " << result.epochs.back().total << ", checkpoint at "
                      << (dir / "checkpoint.json") << "\n";
        } else if (eval_cmd->parsed()) {
            RunConfig cfg = resolve_config(eval_args);
            fs::path dir = prepare_out_dir(eval_args);
            auto scenes = dataset_for(cfg, eval_data, cfg.train.eval_scenes, 500000ULL);
            CftDetector det(cfg);
            det.params().load(eval_ckpt);
            std::vector<SceneRecord> records;
            MetricsReport report = evaluate_detector(det, scenes, &records);
            write_text_file((dir / "metrics.json").string(), report.to_json());
            write_text_file((dir / "metrics.txt").string(), report.to_table());
            write_text_file((dir / "detections.json").string(), detections_to_json(records));
            std::cout << report.to_table();
        } else if (cost_cmd->parsed()) {
            RunConfig cfg = resolve_config(cost_args);
            fs::path dir = prepare_out_dir(cost_args);
            auto reports = cost_table(cfg.model, cfg.seed);
            write_text_file((dir / "cost.csv").string(), cost_table_csv(reports));
            std::cout << cost_table_csv(reports);
        } else if (embed_cmd->parsed()) {
            RunConfig cfg = resolve_config(embed_args);
            fs::path dir = prepare_out_dir(embed_args);
            ExperimentResult result = experiment_embedding(cfg, embed_seeds, embed_threads);
            write_text_file((dir / "embedding.csv").string(), result.csv);
            write_text_file((dir / "embedding.json").string(), result.json);
            save_run_config(cfg, (dir / "config.json").string());
            std::cout << result.csv;
        } else if (win_cmd->parsed()) {
            RunConfig cfg = resolve_config(win_args);
            fs::path dir = prepare_out_dir(win_args);
            ExperimentResult result = experiment_windows(cfg, win_seeds, win_threads);
            write_text_file((dir / "windows.csv").string(), result.csv);
            write_text_file((dir / "windows.json").string(), result.json);
            save_run_config(cfg, (dir / "config.json").string());
            std::cout << result.csv;
        } else if (noise_cmd->parsed()) {
            RunConfig cfg = resolve_config(noise_args);
            fs::path dir = prepare_out_dir(noise_args);
            ExperimentResult result = experiment_noise(cfg, noise_seeds, noise_sigmas, noise_threads);
            write_text_file((dir / "noise.csv").string(), result.csv);
            write_text_file((dir / "noise.json").string(), result.json);
            save_run_config(cfg, (dir / "config.json").string());
            std::cout << result.csv;
        } else if (attn_cmd->parsed()) {
            RunConfig cfg = resolve_config(attn_args);
            fs::path dir = prepare_out_dir(attn_args);
            CftDetector det(cfg);
            if (!attn_ckpt.empty()) det.params().load(attn_ckpt);
            const CameraRig rig = CameraRig::standard(cfg.scene.image_size);
            SceneSample scene = generate_scene(attn_scene_seed, cfg.scene, rig);
            const int64_t h = attn_h >= 0 ? attn_h : cfg.model.bev.grid_h / 2;
            const int64_t w = attn_w >= 0 ? attn_w : cfg.model.bev.grid_w / 2;
            write_text_file((dir / "attention.csv").string(), dump_attention_csv(det, scene, h, w));
            std::cout << "wrote " << (dir / "attention.csv") << "\n";
        } else if (dump_cmd->parsed()) {
            RunConfig cfg = resolve_config(dump_args);
            fs::path dir = prepare_out_dir(dump_args);
            CftDetector det(cfg);
            if (!dump_ckpt.empty()) det.params().load(dump_ckpt);
            write_text_file((dir / "embeddings.csv").string(), dump_embeddings_csv(det));
            std::cout << "wrote " << (dir / "embeddings.csv") << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
