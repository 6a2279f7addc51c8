#include "bevrefine/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

namespace bevrefine {

namespace {
std::int64_t now_ns() {
    return std::chrono::duration_cast<std::chrono::nanoseconds>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}
}  // namespace

SamplingParams SamplingSpec::materialize() const {
    SamplingParams p;
    if (n_offsets == 1 && spread == 0.0) {
        p = SamplingParams::identity();
    } else {
        p = SamplingParams::seeded(n_offsets, seed, spread);
    }
    p.normalize_by_hits = normalize_by_hits;
    return p;
}

void PipelineConfig::validate() const {
    grid.validate();
    contrast.validate();
    if (n_layers < 1) throw ConfigError("n_layers must be >= 1");
    if (!(lambda_pas >= 0.0) || !(lambda_ibcl >= 0.0))
        throw ConfigError("loss weights must be non-negative");
    if (sampling.n_offsets < 1) throw ConfigError("sampling needs at least one offset");
    if (!(sampling.spread >= 0.0)) throw ConfigError("sampling spread must be non-negative");
}

std::string PipelineConfig::to_json() const {
    nlohmann::json j;
    j["grid"] = {{"h", grid.h},
                 {"w", grid.w},
                 {"range_min_x", grid.range_min_x},
                 {"range_max_x", grid.range_max_x},
                 {"range_min_y", grid.range_min_y},
                 {"range_max_y", grid.range_max_y},
                 {"z_min", grid.z_min},
                 {"z_max", grid.z_max},
                 {"n_ref", grid.n_ref},
                 {"refine_r", grid.refine_r}};
    j["n_layers"] = n_layers;
    j["contrast"] = {{"tau", contrast.tau},
                     {"n_background", contrast.n_background},
                     {"d_min", contrast.d_min},
                     {"pool_s", contrast.pool_s},
                     {"patch_b", contrast.patch_b},
                     {"embed_dim", contrast.embed_dim},
                     {"rng_seed", contrast.rng_seed},
                     {"class_conditional_positives", contrast.class_conditional_positives}};
    j["lambda_pas"] = lambda_pas;
    j["lambda_ibcl"] = lambda_ibcl;
    j["refine_enabled"] = refine_enabled;
    j["ibcl_enabled"] = ibcl_enabled;
    j["sampling"] = {{"n_offsets", sampling.n_offsets},
                     {"spread", sampling.spread},
                     {"seed", sampling.seed},
                     {"normalize_by_hits", sampling.normalize_by_hits}};
    j["extractor_seed"] = extractor_seed;
    return j.dump(2);
}

PipelineConfig PipelineConfig::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("config JSON parse failure: ") + e.what());
    }
    PipelineConfig cfg;  // absent fields keep the documented defaults
    try {
        if (j.contains("grid")) {
            const auto& g = j["grid"];
            cfg.grid.h = g.value("h", cfg.grid.h);
            cfg.grid.w = g.value("w", cfg.grid.w);
            cfg.grid.range_min_x = g.value("range_min_x", cfg.grid.range_min_x);
            cfg.grid.range_max_x = g.value("range_max_x", cfg.grid.range_max_x);
            cfg.grid.range_min_y = g.value("range_min_y", cfg.grid.range_min_y);
            cfg.grid.range_max_y = g.value("range_max_y", cfg.grid.range_max_y);
            cfg.grid.z_min = g.value("z_min", cfg.grid.z_min);
            cfg.grid.z_max = g.value("z_max", cfg.grid.z_max);
            cfg.grid.n_ref = g.value("n_ref", cfg.grid.n_ref);
            cfg.grid.refine_r = g.value("refine_r", cfg.grid.refine_r);
        }
        cfg.n_layers = j.value("n_layers", cfg.n_layers);
        if (j.contains("contrast")) {
            const auto& c = j["contrast"];
            cfg.contrast.tau = c.value("tau", cfg.contrast.tau);
            cfg.contrast.n_background = c.value("n_background", cfg.contrast.n_background);
            cfg.contrast.d_min = c.value("d_min", cfg.contrast.d_min);
            cfg.contrast.pool_s = c.value("pool_s", cfg.contrast.pool_s);
            cfg.contrast.patch_b = c.value("patch_b", cfg.contrast.patch_b);
            cfg.contrast.embed_dim = c.value("embed_dim", cfg.contrast.embed_dim);
            cfg.contrast.rng_seed = c.value("rng_seed", cfg.contrast.rng_seed);
            cfg.contrast.class_conditional_positives =
                c.value("class_conditional_positives", cfg.contrast.class_conditional_positives);
        }
        cfg.lambda_pas = j.value("lambda_pas", cfg.lambda_pas);
        cfg.lambda_ibcl = j.value("lambda_ibcl", cfg.lambda_ibcl);
        cfg.refine_enabled = j.value("refine_enabled", cfg.refine_enabled);
        cfg.ibcl_enabled = j.value("ibcl_enabled", cfg.ibcl_enabled);
        if (j.contains("sampling")) {
            const auto& s = j["sampling"];
            cfg.sampling.n_offsets = s.value("n_offsets", cfg.sampling.n_offsets);
            cfg.sampling.spread = s.value("spread", cfg.sampling.spread);
            cfg.sampling.seed = s.value("seed", cfg.sampling.seed);
            cfg.sampling.normalize_by_hits =
                s.value("normalize_by_hits", cfg.sampling.normalize_by_hits);
        }
        cfg.extractor_seed = j.value("extractor_seed", cfg.extractor_seed);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("config JSON field error: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

PipelineConfig PipelineConfig::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json(ss.str());
}

void PipelineConfig::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << to_json() << "\n";
}

void Scene::validate() const {
    if (cams.empty()) throw ConfigError("scene has no cameras");
    for (const auto& cam : cams) cam.validate();
    if (feature_maps.size() != cams.size())
        throw ConfigError("scene needs exactly one feature map per camera");
    std::unordered_set<int> cam_views;
    for (const auto& cam : cams)
        if (!cam_views.insert(cam.view_id).second)
            throw ConfigError("duplicate camera view_id " + std::to_string(cam.view_id));
    int ch = -1;
    for (const auto& fm : feature_maps) {
        fm.validate();
        if (!cam_views.count(fm.view_id))
            throw ConfigError("feature map view " + std::to_string(fm.view_id) + " has no camera");
        if (ch < 0) ch = fm.channels;
        if (fm.channels != ch) throw ConfigError("feature maps disagree on channel count");
    }
    for (const auto& b : boxes_2d) {
        b.validate();
        if (!cam_views.count(b.view_id))
            throw ConfigError("2D box view " + std::to_string(b.view_id) + " has no camera");
    }
    for (const auto& b : boxes_3d) b.validate();
}

PipelineParams make_params(const PipelineConfig& cfg, int channels) {
    PipelineParams p;
    p.sampling = cfg.sampling.materialize();
    p.extractor = ExtractorParams::seeded(channels, cfg.contrast.embed_dim, cfg.contrast.pool_s,
                                          cfg.extractor_seed);
    return p;
}

std::int64_t Diagnostics::sca_total_ns() const {
    std::int64_t t = 0;
    for (const auto& l : layers) t += l.sca_ns;
    return t;
}

std::int64_t Diagnostics::refine_total_ns() const {
    std::int64_t t = 0;
    for (const auto& l : layers) t += l.refine_ns;
    return t;
}

std::string Diagnostics::to_json() const {
    nlohmann::json j;
    j["fg_cells"] = fg_cells;
    j["fg_fraction"] = fg_fraction;
    j["mask_ns"] = mask_ns;
    nlohmann::json layer_arr = nlohmann::json::array();
    for (const auto& l : layers)
        layer_arr.push_back({{"sca_ns", l.sca_ns}, {"refine_ns", l.refine_ns}});
    j["layers"] = layer_arr;
    j["sca"] = {{"pairs_total", sca.pairs_total}, {"hits_valid", sca.hits_valid}};
    j["refine"] = {{"cells_refined", refine.cells_refined},
                   {"sub_evals", refine.sub_evals},
                   {"pairs_total", refine.sca.pairs_total},
                   {"hits_valid", refine.sca.hits_valid}};
    j["n_instances"] = n_instances;
    j["n_backgrounds"] = n_backgrounds;
    j["bg_with_replacement"] = bg_with_replacement;
    j["skipped_boxes"] = skipped_boxes;
    j["loss_ibcl"] = loss_ibcl;
    return j.dump(2);
}

PipelineResult run_pipeline(const Scene& scene, const PipelineConfig& cfg,
                            const PipelineParams& params) {
    cfg.validate();
    scene.validate();
    params.sampling.validate();
    const int channels = scene.channels();

    PipelineResult res;
    std::int64_t t0 = now_ns();
    res.mask = build_mask(cfg.grid, scene.cams, scene.boxes_2d);
    res.diag.mask_ns = now_ns() - t0;
    res.diag.fg_cells = res.mask.fg_count();
    res.diag.fg_fraction =
        static_cast<double>(res.diag.fg_cells) / static_cast<double>(cfg.grid.cells());

    BevTensor state;
    if (params.initial_queries) {
        state = *params.initial_queries;
        if (!state.dims_match(cfg.grid) || state.channels != channels)
            throw ConfigError("initial queries do not match the grid/features");
    } else {
        state = BevTensor::zeros(cfg.grid.h, cfg.grid.w, channels, StageTag::Queries);
    }

    // Temporal self-attention is an identity pass-through at this scale; each
    // encoder layer is cross-view attention plus (optionally) refinement.
    res.diag.layers.resize(static_cast<std::size_t>(cfg.n_layers));
    for (int layer = 0; layer < cfg.n_layers; ++layer) {
        auto& timing = res.diag.layers[static_cast<std::size_t>(layer)];
        t0 = now_ns();
        state = sca(cfg.grid, scene.cams, scene.feature_maps, params.sampling, state,
                    &res.diag.sca);
        timing.sca_ns = now_ns() - t0;
        if (cfg.refine_enabled) {
            t0 = now_ns();
            state = refine_and_fuse(cfg.grid, scene.cams, scene.feature_maps, params.sampling,
                                    state, res.mask, &res.diag.refine);
            timing.refine_ns = now_ns() - t0;
        }
    }
    state.stage = StageTag::Final;
    res.bt = std::move(state);

    if (cfg.ibcl_enabled) {
        std::vector<InstanceFeature> instances;
        for (const auto& box : scene.boxes_3d) {
            GridRect rect;
            try {
                rect = box_to_bev_rect(cfg.grid, box);
            } catch (const std::out_of_range&) {
                ++res.diag.skipped_boxes;
                continue;
            }
            instances.push_back(extract_instance(res.bt, rect, params.extractor, &box));
        }
        const auto fg_region = footprint_cells(cfg.grid, scene.boxes_3d);
        const BackgroundSamples bgs =
            sample_background(cfg.grid, res.bt, fg_region, cfg.contrast, params.extractor);
        const ContrastLossResult loss = contrast_loss(instances, bgs.features, cfg.contrast);
        res.loss_ibcl = loss.loss;
        res.diag.n_instances = static_cast<int>(instances.size());
        res.diag.n_backgrounds = static_cast<int>(bgs.features.size());
        res.diag.bg_with_replacement = bgs.with_replacement;
    }
    res.diag.loss_ibcl = res.loss_ibcl;
    return res;
}

double total_loss(double l_base, double l_pas, double l_ibcl, const PipelineConfig& cfg) {
    if (!std::isfinite(l_base) || !std::isfinite(l_pas) || !std::isfinite(l_ibcl))
        throw std::invalid_argument("total_loss: non-finite loss term");
    return l_base + cfg.lambda_pas * l_pas + cfg.lambda_ibcl * l_ibcl;
}

}  // namespace bevrefine
