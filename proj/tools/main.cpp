#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "bevrefine/bench.hpp"
#include "bevrefine/parallel.hpp"
#include "bevrefine/scenesim.hpp"

namespace fs = std::filesystem;
using namespace bevrefine;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << text;
    if (!out) throw IoError("failed writing " + path);
}

PipelineConfig load_config(const std::string& path, bool has_seed, std::uint64_t seed) {
    PipelineConfig cfg = path.empty() ? PipelineConfig{} : PipelineConfig::load(path);
    if (has_seed) {
        cfg.contrast.rng_seed = seed;
        cfg.extractor_seed = seed + 1;
        cfg.sampling.seed = seed + 2;
    }
    return cfg;
}

int cmd_gen_scene(const std::string& spec_path, const std::string& out_dir, bool has_seed,
                  std::uint64_t seed) {
    SimSpec spec = spec_path.empty() ? SimSpec{} : simspec_from_json(read_file(spec_path));
    if (has_seed) spec.rng_seed = seed;
    const Scene scene = generate_scene(spec);
    fs::create_directories(out_dir);
    write_file((fs::path(out_dir) / "simspec.json").string(), simspec_to_json(spec) + "\n");
    const std::string json_path = save_scene(scene, out_dir);
    std::cout << "scene written to " << json_path << " (" << scene.cams.size() << " views, "
              << scene.boxes_3d.size() << " objects, " << scene.boxes_2d.size() << " 2D boxes)\n";
    return 0;
}

int cmd_run(const std::string& scene_path, const std::string& config_path,
            const std::string& out_dir, bool has_seed, std::uint64_t seed) {
    const Scene scene = load_scene(scene_path);
    const PipelineConfig cfg = load_config(config_path, has_seed, seed);
    const PipelineParams params = make_params(cfg, scene.channels());
    const PipelineResult res = run_pipeline(scene, cfg, params);

    fs::create_directories(out_dir);
    save_bev((fs::path(out_dir) / "bt.bev").string(), res.bt);
    save_mask_pgm((fs::path(out_dir) / "mask.pgm").string(), res.mask);
    write_file((fs::path(out_dir) / "mask.json").string(), mask_to_json(res.mask) + "\n");
    write_file((fs::path(out_dir) / "diagnostics.json").string(), res.diag.to_json() + "\n");
    std::cout << "final BEV tensor " << res.bt.h << "x" << res.bt.w << "x" << res.bt.channels
              << ", foreground cells " << res.diag.fg_cells << "/" << cfg.grid.cells();
    if (cfg.ibcl_enabled) std::cout << ", contrast loss " << res.loss_ibcl;
    std::cout << "\noutputs in " << out_dir << "\n";
    return 0;
}

int cmd_mask(const std::string& scene_path, const std::string& config_path,
             const std::string& out_dir) {
    const Scene scene = load_scene(scene_path);
    const PipelineConfig cfg = load_config(config_path, false, 0);
    const ForegroundMask mask = build_mask(cfg.grid, scene.cams, scene.boxes_2d);
    fs::create_directories(out_dir);
    save_mask_pgm((fs::path(out_dir) / "mask.pgm").string(), mask);
    write_file((fs::path(out_dir) / "mask.json").string(), mask_to_json(mask) + "\n");
    std::cout << "mask " << mask.w << "x" << mask.h << ", foreground cells " << mask.fg_count()
              << "\n";
    return 0;
}

int cmd_bench(const std::string& scene_path, const std::string& config_path,
              const BenchOptions& options) {
    const BenchReport report = run_bench_files(scene_path, config_path, options);
    std::cout << "cells " << report.cells << ", foreground " << report.fg_cells << " ("
              << report.fg_fraction() * 100.0 << "%)\n"
              << "model attention FLOPs: baseline " << report.model.baseline << ", refined "
              << report.model.refined << " (ratio " << report.model.overhead_ratio() << ")\n"
              << "measured attention ns: baseline " << report.measured_baseline_ns << ", refined "
              << report.measured_refined_ns << " (ratio " << report.measured_overhead_ratio
              << ")\n";
    if (!options.out_dir.empty()) std::cout << "report in " << options.out_dir << "\n";
    return 0;
}

int cmd_gradcheck(std::uint64_t seed, int configs, double threshold) {
    const GradCheckReport report = run_gradient_check(seed, configs);
    std::printf("gradient check: %d configs, %llu components, max relative error %.3e\n",
                report.configs, static_cast<unsigned long long>(report.components),
                report.max_rel_err);
    if (report.max_rel_err < threshold) {
        std::printf("PASS (threshold %.1e)\n", threshold);
        return 0;
    }
    std::printf("FAIL (threshold %.1e)\n", threshold);
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"box-guided BEV refinement pipeline with contrastive supervision"};
    app.require_subcommand(1);

    std::uint64_t seed = 0;
    bool has_seed = false;
    int workers = 0;

    // Shared flags are registered per subcommand so they appear in each help.
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--seed", seed, "override configured seeds")
            ->each([&](const std::string&) { has_seed = true; });
        sub->add_option("--workers", workers, "worker threads for grid kernels (0 = default)");
    };

    auto* gen = app.add_subcommand("gen-scene", "generate a synthetic multi-view scene");
    std::string spec_path, out_dir = "out";
    gen->add_option("--spec", spec_path, "simulation spec JSON (defaults when omitted)");
    gen->add_option("--out-dir", out_dir, "output directory")->required();
    add_common(gen);

    auto* run = app.add_subcommand("run", "run the pipeline on a scene");
    std::string scene_path, config_path;
    run->add_option("--scene", scene_path, "scene JSON")->required();
    run->add_option("--config", config_path, "pipeline config JSON (defaults when omitted)");
    run->add_option("--out-dir", out_dir, "output directory")->required();
    add_common(run);

    auto* mask = app.add_subcommand("mask", "compute the foreground mask only");
    mask->add_option("--scene", scene_path, "scene JSON")->required();
    mask->add_option("--config", config_path, "pipeline config JSON (grid settings)");
    mask->add_option("--out-dir", out_dir, "output directory")->required();
    add_common(mask);

    auto* bench = app.add_subcommand("bench", "time the attention stage against the cost model");
    int repeat = 7;
    bench->add_option("--scene", scene_path, "scene JSON")->required();
    bench->add_option("--config", config_path, "pipeline config JSON (defaults when omitted)");
    bench->add_option("--out-dir", out_dir, "output directory (report JSON + CSV)");
    bench->add_option("--repeat", repeat, "repetitions per timing (median reported)");
    add_common(bench);

    auto* grad = app.add_subcommand("gradcheck", "verify the loss gradient against differences");
    int grad_configs = 50;
    double grad_threshold = 1e-4;
    grad->add_option("--configs", grad_configs, "number of random configurations");
    grad->add_option("--threshold", grad_threshold, "max relative error allowed");
    add_common(grad);

    CLI11_PARSE(app, argc, argv);

    try {
        if (workers > 0) set_worker_count(workers);
        if (gen->parsed()) return cmd_gen_scene(spec_path, out_dir, has_seed, seed);
        if (run->parsed()) return cmd_run(scene_path, config_path, out_dir, has_seed, seed);
        if (mask->parsed()) return cmd_mask(scene_path, config_path, out_dir);
        if (bench->parsed()) {
            BenchOptions options;
            options.repeat = repeat;
            options.workers = workers > 0 ? workers : 1;
            options.seed = seed;
            options.override_seed = has_seed;
            options.out_dir = out_dir == "out" && !bench->count("--out-dir") ? "" : out_dir;
            return cmd_bench(scene_path, config_path, options);
        }
        if (grad->parsed()) return cmd_gradcheck(has_seed ? seed : 20250809ULL, grad_configs,
                                                 grad_threshold);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
