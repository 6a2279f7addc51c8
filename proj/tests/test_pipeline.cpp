#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "bevrefine/pipeline.hpp"
#include "bevrefine/reference.hpp"
#include "bevrefine/scenesim.hpp"
#include "test_common.hpp"

using namespace bevrefine;
using testutil::rng_t;

namespace {

Scene test_scene(std::uint64_t seed, int n_objects = 4, int channels = 4) {
    SimSpec sim;
    sim.rng_seed = seed;
    sim.n_objects = n_objects;
    sim.feature_channels = channels;
    return generate_scene(sim);
}

PipelineConfig small_config(int side = 10, int n_layers = 2) {
    PipelineConfig cfg;
    cfg.grid.h = cfg.grid.w = side;
    cfg.grid.refine_r = 2;
    cfg.n_layers = n_layers;
    cfg.contrast.n_background = 20;
    cfg.contrast.embed_dim = 8;
    return cfg;
}

}  // namespace

TEST_CASE("defaults carry the documented constants") {
    const PipelineConfig cfg;
    CHECK(cfg.grid.h == 50);
    CHECK(cfg.grid.w == 50);
    CHECK(cfg.grid.range_min_x == -51.2);
    CHECK(cfg.grid.range_max_x == 51.2);
    CHECK(cfg.grid.z_min == -53.0);
    CHECK(cfg.grid.z_max == -47.0);
    CHECK(cfg.grid.n_ref == 4);
    CHECK(cfg.grid.refine_r == 4);
    CHECK(cfg.contrast.n_background == 200);
    CHECK(cfg.contrast.d_min == 4.0);
    CHECK(cfg.lambda_pas == 1.0);
    CHECK(cfg.lambda_ibcl == 2.0);
    CHECK(cfg.n_layers == 3);
}

TEST_CASE("config JSON round-trip and defaults for missing fields") {
    PipelineConfig cfg = small_config();
    cfg.refine_enabled = false;
    cfg.lambda_ibcl = 3.5;
    cfg.sampling.n_offsets = 4;
    cfg.sampling.spread = 0.7;
    const PipelineConfig back = PipelineConfig::from_json(cfg.to_json());
    CHECK(back.grid.h == cfg.grid.h);
    CHECK(back.refine_enabled == false);
    CHECK(back.lambda_ibcl == 3.5);
    CHECK(back.sampling.n_offsets == 4);
    CHECK(back.sampling.spread == 0.7);
    CHECK(back.contrast.n_background == 20);

    const PipelineConfig sparse = PipelineConfig::from_json("{\"n_layers\": 5}");
    CHECK(sparse.n_layers == 5);
    CHECK(sparse.grid.h == 50);
    CHECK(sparse.contrast.d_min == 4.0);

    CHECK_THROWS_AS(PipelineConfig::from_json("{\"n_layers\": 0}"), ConfigError);
    CHECK_THROWS_AS(PipelineConfig::from_json("nope"), IoError);
}

TEST_CASE("total_loss combines the three terms") {
    const PipelineConfig cfg;  // lambda_pas = 1.0, lambda_ibcl = 2.0
    CHECK(total_loss(1.0, 0.5, 0.2, cfg) == doctest::Approx(1.9).epsilon(1e-15));

    PipelineConfig zero = cfg;
    zero.lambda_pas = 0.0;
    zero.lambda_ibcl = 0.0;
    CHECK(total_loss(0.37, 100.0, -3.0, zero) == 0.37);

    CHECK(total_loss(0.0, 0.0, 0.7, cfg) == 2.0 * 0.7);

    CHECK_THROWS_AS(total_loss(std::nan(""), 0, 0, cfg), std::invalid_argument);
    CHECK_THROWS_AS(total_loss(0, std::numeric_limits<double>::infinity(), 0, cfg),
                    std::invalid_argument);
}

TEST_CASE("baseline mode equals a plain attention stack") {
    const Scene scene = test_scene(31);
    PipelineConfig cfg = small_config(12, 3);
    cfg.refine_enabled = false;
    cfg.ibcl_enabled = false;
    const PipelineParams params = make_params(cfg, scene.channels());

    const PipelineResult res = run_pipeline(scene, cfg, params);

    BevTensor state = BevTensor::zeros(cfg.grid.h, cfg.grid.w, scene.channels());
    for (int layer = 0; layer < cfg.n_layers; ++layer)
        state = sca(cfg.grid, scene.cams, scene.feature_maps, params.sampling, state);
    CHECK(res.bt.data == state.data);
    CHECK(res.bt.stage == StageTag::Final);
    CHECK(res.loss_ibcl == 0.0);
    CHECK(res.diag.refine.cells_refined == 0);
    CHECK(res.diag.n_backgrounds == 0);
}

TEST_CASE("empty 2D boxes make refinement a no-op") {
    Scene scene = test_scene(32);
    scene.boxes_2d.clear();
    PipelineConfig on = small_config();
    on.ibcl_enabled = false;
    PipelineConfig off = on;
    on.refine_enabled = true;
    off.refine_enabled = false;
    const PipelineParams params = make_params(on, scene.channels());

    const PipelineResult with_refine = run_pipeline(scene, on, params);
    const PipelineResult without = run_pipeline(scene, off, params);
    CHECK(with_refine.bt.data == without.bt.data);
    CHECK(with_refine.diag.fg_cells == 0);
    CHECK(with_refine.diag.refine.cells_refined == 0);
}

TEST_CASE("pipeline equals a straight-line reimplementation on a 10x10 grid") {
    const Scene scene = test_scene(33, 5);
    PipelineConfig cfg = small_config(10, 2);
    cfg.ibcl_enabled = false;
    const PipelineParams params = make_params(cfg, scene.channels());
    const PipelineResult res = run_pipeline(scene, cfg, params);

    const ForegroundMask mask = expected_foreground(scene, cfg.grid);
    BevTensor state = BevTensor::zeros(cfg.grid.h, cfg.grid.w, scene.channels());
    for (int layer = 0; layer < cfg.n_layers; ++layer) {
        state = reference::sca_grid(cfg.grid, scene.cams, scene.feature_maps, params.sampling,
                                    state);
        state = reference::refine_and_fuse(cfg.grid, scene.cams, scene.feature_maps,
                                           params.sampling, state, mask);
    }
    CHECK(res.mask.values == mask.values);
    CHECK(res.bt.data == state.data);
}

TEST_CASE("ablation flags remove exactly their stage") {
    const Scene scene = test_scene(34);
    const PipelineConfig base = small_config();
    for (const bool refine : {false, true})
        for (const bool ibcl : {false, true}) {
            PipelineConfig cfg = base;
            cfg.refine_enabled = refine;
            cfg.ibcl_enabled = ibcl;
            const PipelineResult res =
                run_pipeline(scene, cfg, make_params(cfg, scene.channels()));
            if (refine)
                CHECK(res.diag.refine.sub_evals > 0);
            else
                CHECK(res.diag.refine.sub_evals == 0);
            if (ibcl) {
                CHECK(res.diag.n_backgrounds == cfg.contrast.n_background);
                CHECK(res.diag.n_instances == static_cast<int>(scene.boxes_3d.size()));
            } else {
                CHECK(res.diag.n_backgrounds == 0);
            }
            CHECK(res.diag.sca.pairs_total ==
                  static_cast<std::uint64_t>(cfg.n_layers) * cfg.grid.cells() *
                      scene.cams.size() * static_cast<std::uint64_t>(cfg.grid.n_ref));
        }
}

TEST_CASE("equal seeds give bit-identical results") {
    const Scene scene = test_scene(35);
    const PipelineConfig cfg = small_config();
    const PipelineParams params = make_params(cfg, scene.channels());
    const PipelineResult a = run_pipeline(scene, cfg, params);
    const PipelineResult b = run_pipeline(scene, cfg, params);
    CHECK(a.bt.data == b.bt.data);
    CHECK(a.mask.values == b.mask.values);
    CHECK(a.loss_ibcl == b.loss_ibcl);
    CHECK(bev_to_bytes(a.bt) == bev_to_bytes(b.bt));
}

TEST_CASE("masked-off cells ride through every layer bit for bit") {
    const Scene scene = test_scene(36);
    PipelineConfig cfg = small_config(12, 3);
    cfg.ibcl_enabled = false;
    const PipelineParams params = make_params(cfg, scene.channels());
    const ForegroundMask mask = build_mask(cfg.grid, scene.cams, scene.boxes_2d);

    BevTensor state = BevTensor::zeros(cfg.grid.h, cfg.grid.w, scene.channels());
    for (int layer = 0; layer < cfg.n_layers; ++layer) {
        const BevTensor coarse =
            sca(cfg.grid, scene.cams, scene.feature_maps, params.sampling, state);
        const BevTensor fused = refine_and_fuse(cfg.grid, scene.cams, scene.feature_maps,
                                                params.sampling, coarse, mask);
        for (int gy = 0; gy < cfg.grid.h; ++gy)
            for (int gx = 0; gx < cfg.grid.w; ++gx) {
                if (mask.at(gx, gy)) continue;
                const auto a = coarse.cell(gx, gy);
                const auto b = fused.cell(gx, gy);
                for (int c = 0; c < scene.channels(); ++c)
                    CHECK(a[static_cast<std::size_t>(c)] == b[static_cast<std::size_t>(c)]);
            }
        state = fused;
    }
}

TEST_CASE("scene and parameter validation") {
    Scene empty;
    const PipelineConfig cfg = small_config();
    CHECK_THROWS_AS(run_pipeline(empty, cfg, PipelineParams{}), ConfigError);

    Scene scene = test_scene(37);
    scene.feature_maps.pop_back();
    CHECK_THROWS_AS(run_pipeline(scene, cfg, make_params(cfg, 4)), ConfigError);

    Scene bad_queries_scene = test_scene(38);
    PipelineParams params = make_params(cfg, bad_queries_scene.channels());
    params.initial_queries = BevTensor::zeros(3, 3, bad_queries_scene.channels());
    CHECK_THROWS_AS(run_pipeline(bad_queries_scene, cfg, params), ConfigError);
}

TEST_CASE("initial queries flow through the residual path") {
    const Scene scene = test_scene(39, 0);  // no objects: zero-sum attention on empty fields?
    PipelineConfig cfg = small_config(8, 1);
    cfg.ibcl_enabled = false;
    cfg.refine_enabled = false;
    PipelineParams params = make_params(cfg, scene.channels());
    rng_t rng(40);
    BevTensor init = BevTensor::zeros(cfg.grid.h, cfg.grid.w, scene.channels());
    for (double& v : init.data) v = testutil::gauss(rng);
    params.initial_queries = init;

    const PipelineResult res = run_pipeline(scene, cfg, params);
    const BevTensor direct =
        sca(cfg.grid, scene.cams, scene.feature_maps, params.sampling, init);
    CHECK(res.bt.data == direct.data);
}
