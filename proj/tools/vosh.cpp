#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "vosh/pipeline.hpp"

using namespace vosh;

namespace {

enum Exit { kOk = 0, kUsage = 2, kValidation = 3, kRuntime = 4 };

struct Globals {
    std::uint64_t seed = 0;
    bool seed_set = false;
    unsigned threads = 1;
    bool quiet = false;
};

/// Flags that override pipeline config keys; unset flags leave the preset alone.
struct Overrides {
    std::string config_file;
    std::string preset = "base";
    nlohmann::json patch = nlohmann::json::object();

    template <class T>
    void flag(CLI::App* app, const std::string& name, const std::string& section, const std::string& key, const std::string& help) {
        app->add_option_function<T>(name, [this, section, key](const T& v) { patch[section][key] = v; }, help);
    }
};

PipelineConfig build_config(const Overrides& o, const Globals& g) {
    nlohmann::json j = nlohmann::json::object();
    if (!o.config_file.empty()) {
        std::ifstream in(o.config_file);
        if (!in) throw std::runtime_error("cannot open config file: " + o.config_file);
        try {
            j = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw DescriptorError("config", std::string("cannot parse ") + o.config_file + ": " + e.what());
        }
    }
    if (!j.contains("preset") || o.preset != "base") j["preset"] = o.preset;
    j.merge_patch(o.patch);
    if (g.seed_set) j["seed"] = g.seed;
    return make_pipeline_config(j);
}

void write_json(const std::string& path, const nlohmann::json& j) {
    if (path.empty() || path == "-") {
        std::cout << j.dump(2) << "\n";
        return;
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << j.dump(2) << "\n";
}

Camera read_camera(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open camera file: " + path);
    return camera_from_json(nlohmann::json::parse(in));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"vosh: voxel-mesh hybrid radiance fields"};
    app.require_subcommand(1);
    Globals g;
    app.add_option_function<std::uint64_t>("--seed", [&](const std::uint64_t& s) { g.seed = s, g.seed_set = true; }, "Global random seed");
    app.add_option("--threads", g.threads, "Worker threads for pixel-parallel loops")->check(CLI::PositiveNumber);
    app.add_flag("--quiet", g.quiet, "Suppress progress output");

    Overrides ov;
    bool force = false;
    std::string data_dir, grid_path, mesh_path, hybrid_path, asset_path, out, camera_path_arg, scene_arg = "sphere_plane";
    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", ov.config_file, "Pipeline config file (JSON)");
        sub->add_option("--preset", ov.preset, "Hyper-parameter preset")->check(CLI::IsMember({"base", "light"}));
        sub->add_flag("--force", force, "Rerun even when the stage is up to date");
    };

    auto* gen = app.add_subcommand("gen-data", "Render a posed dataset from an analytic scene");
    gen->add_option("--scene", scene_arg, "Built-in scene name or descriptor file");
    gen->add_option("--out", out, "Output dataset directory")->required();
    ov.flag<int>(gen, "--views", "data", "views", "Number of views");
    ov.flag<int>(gen, "--width", "data", "width", "Image width");
    ov.flag<int>(gen, "--height", "data", "height", "Image height");
    common(gen);

    auto* train = app.add_subcommand("train-grid", "Fit the voxel grid and MLP head");
    train->add_option("--data", data_dir, "Dataset directory")->required();
    train->add_option("--out", out, "Output stage directory")->required();
    ov.flag<int>(train, "--resolution", "train", "resolution", "Grid resolution");
    ov.flag<int>(train, "--iterations", "train", "iterations", "Optimizer steps");
    ov.flag<int>(train, "--batch-rays", "train", "batch_rays", "Rays per step");
    ov.flag<float>(train, "--lr-grid", "train", "lr_grid", "Grid learning rate");
    ov.flag<float>(train, "--lr-mlp", "train", "lr_mlp", "MLP learning rate");
    common(train);

    auto* extract = app.add_subcommand("extract-mesh", "Marching cubes plus coarse selection");
    extract->add_option("--grid", grid_path, "Grid checkpoint")->required();
    extract->add_option("--out", out, "Output stage directory")->required();
    ov.flag<float>(extract, "--iso-alpha", "extract", "iso_alpha", "Per-voxel opacity of the isosurface");
    ov.flag<bool>(extract, "--coarse-select", "extract", "coarse_select", "Enable coarse selection (true|false)");
    ov.flag<float>(extract, "--bound-fraction", "extract", "bound_fraction", "Near-cube half extent");
    ov.flag<float>(extract, "--max-edge-len", "extract", "max_edge_len", "Longest kept edge (contracted units)");
    ov.flag<int>(extract, "--min-patch-tris", "extract", "min_patch_tris", "Smallest kept patch");
    common(extract);

    auto* refine = app.add_subcommand("refine", "Refine mesh appearance and remesh");
    refine->add_option("--data", data_dir, "Dataset directory")->required();
    refine->add_option("--grid", grid_path, "Grid checkpoint")->required();
    refine->add_option("--mesh", mesh_path, "Extracted mesh (.vmsh)")->required();
    refine->add_option("--out", out, "Output stage directory")->required();
    ov.flag<int>(refine, "--iterations", "surface", "iterations", "Refinement steps per round");
    ov.flag<float>(refine, "--lr", "surface", "lr", "Appearance learning rate");
    ov.flag<int>(refine, "--alternations", "surface", "alternations", "Refine/remesh rounds");
    common(refine);

    auto* optimize = app.add_subcommand("optimize", "Hybrid optimization and voxel adjustment");
    optimize->add_option("--data", data_dir, "Dataset directory")->required();
    optimize->add_option("--grid", grid_path, "Grid checkpoint")->required();
    optimize->add_option("--mesh", mesh_path, "Refined mesh (.vmsh)")->required();
    optimize->add_option("--out", out, "Output stage directory")->required();
    ov.flag<float>(optimize, "--lambda-voxel", "hybrid", "lambda_voxel", "Voxel adjustment weight");
    ov.flag<int>(optimize, "--r-mesh", "hybrid", "r_mesh", "Mesh-occupancy grid resolution (0 disables)");
    ov.flag<int>(optimize, "--iterations", "hybrid", "iterations", "Optimizer steps");
    ov.flag<int>(optimize, "--batch-rays", "hybrid", "batch_rays", "Rays per step");
    common(optimize);

    auto* bake_cmd = app.add_subcommand("bake", "Bake a hybrid checkpoint into an asset");
    bake_cmd->add_option("--hybrid", hybrid_path, "Hybrid checkpoint (.vhyb)")->required();
    bake_cmd->add_option("--out", out, "Output stage directory")->required();
    common(bake_cmd);

    RenderOptions ropt;
    bool no_skip = false, no_depth = false;
    std::string stats_out;
    auto* render = app.add_subcommand("render", "Render one frame of an asset");
    render->add_option("--asset", asset_path, "Asset file")->required();
    render->add_option("--camera", camera_path_arg, "Camera JSON")->required();
    render->add_option("--out", out, "Output PNG")->required();
    render->add_option("--stats", stats_out, "Write render stats JSON here ('-' for stdout)");
    render->add_flag("--no-skip", no_skip, "Disable occupancy-pyramid skipping");
    render->add_flag("--no-depth-termination", no_depth, "March past the mesh depth");
    render->add_option("--step-fraction", ropt.step_fraction, "Sample step as a fraction of the voxel edge");

    std::size_t frames = 20;
    int width = 128, height = 128;
    auto* bench_cmd = app.add_subcommand("bench", "Render a camera orbit and report sample counts");
    bench_cmd->add_option("--asset", asset_path, "Asset file")->required();
    bench_cmd->add_option("--frames", frames, "Cameras on the orbit")->check(CLI::Range(2, 100000));
    bench_cmd->add_option("--width", width, "Frame width");
    bench_cmd->add_option("--height", height, "Frame height");
    bench_cmd->add_option("--out", out, "Report JSON ('-' for stdout)");
    bench_cmd->add_flag("--no-skip", no_skip, "Disable occupancy-pyramid skipping");
    bench_cmd->add_flag("--no-depth-termination", no_depth, "March past the mesh depth");

    auto* eval = app.add_subcommand("eval", "PSNR/SSIM of an asset on held-out views");
    eval->add_option("--asset", asset_path, "Asset file")->required();
    eval->add_option("--data", data_dir, "Dataset directory")->required();
    eval->add_option("--out", out, "Output stage directory");
    common(eval);

    auto* pipeline = app.add_subcommand("pipeline", "Run every stage into a run directory");
    pipeline->add_option("--scene", scene_arg, "Built-in scene name or descriptor file");
    pipeline->add_option("--out", out, "Run directory")->required();
    common(pipeline);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    set_thread_count(g.threads);
    const StageOptions sopt{force, {g.quiet}};
    try {
        if (gen->parsed()) {
            ov.patch["scene"] = scene_arg;
            const auto cfg = build_config(ov, g);
            gen_data_stage(cfg.scene, cfg.data, cfg.seed, out, sopt);
        } else if (train->parsed()) {
            train_grid_stage(data_dir, build_config(ov, g).train, out, sopt);
        } else if (extract->parsed()) {
            extract_mesh_stage(grid_path, build_config(ov, g).extract, out, sopt);
        } else if (refine->parsed()) {
            refine_stage(data_dir, grid_path, mesh_path, build_config(ov, g).surface, out, sopt);
        } else if (optimize->parsed()) {
            optimize_stage(data_dir, grid_path, mesh_path, build_config(ov, g).hybrid, out, sopt);
        } else if (bake_cmd->parsed()) {
            bake_stage(hybrid_path, out, sopt);
        } else if (render->parsed()) {
            ropt.pyramid_skip = !no_skip;
            ropt.depth_termination = !no_depth;
            require_file(asset_path);
            const Camera cam = read_camera(camera_path_arg);
            const auto f = render_frame(load_asset_file(asset_path), cam, ropt);
            write_png(out, f.image);
            if (!stats_out.empty()) {
                write_json(stats_out, {{"samples_evaluated", f.stats.samples_evaluated}, {"samples_skipped", f.stats.samples_skipped},
                                       {"rays_terminated", f.stats.rays_terminated}, {"rays_total", f.stats.rays_total},
                                       {"seconds", f.stats.seconds}});
            }
        } else if (bench_cmd->parsed()) {
            ropt.pyramid_skip = !no_skip;
            ropt.depth_termination = !no_depth;
            require_file(asset_path);
            const auto r = bench(load_asset_file(asset_path), camera_path(frames, width, height), ropt);
            write_json(out, r.to_json());
        } else if (eval->parsed()) {
            require_file(asset_path);
            EvalReport rep;
            if (out.empty()) {
                rep = evaluate(load_asset_file(asset_path), load_dataset(data_dir));
            } else {
                rep = eval_stage(data_dir, asset_path, out, sopt);
            }
            for (const auto& v : rep.views) std::printf("view %zu psnr %.3f ssim %.4f\n", v.view, v.psnr, v.ssim);
            std::printf("mean psnr %.3f ssim %.4f\n", rep.mean_psnr, rep.mean_ssim);
        } else if (pipeline->parsed()) {
            if (!ov.patch.contains("scene")) ov.patch["scene"] = scene_arg;
            const auto rep = run_pipeline(build_config(ov, g), out, sopt);
            std::printf("mean psnr %.3f ssim %.4f\n", rep.mean_psnr, rep.mean_ssim);
        }
    } catch (const DescriptorError& e) {
        std::fprintf(stderr, "validation error: %s\n", e.what());
        return kValidation;
    } catch (const InvalidArgument& e) {
        std::fprintf(stderr, "validation error: %s\n", e.what());
        return kValidation;
    } catch (const ParseError& e) {
        std::fprintf(stderr, "parse error: %s\n", e.what());
        return kRuntime;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kRuntime;
    }
    return kOk;
}
