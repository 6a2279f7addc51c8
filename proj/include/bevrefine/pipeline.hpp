#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bevrefine/attention.hpp"
#include "bevrefine/contrast.hpp"

namespace bevrefine {

/// How the deformable sampling pattern is materialized from configuration.
struct SamplingSpec {
    int n_offsets = 1;
    double spread = 0.0;  // feature-grid units; 0 with n_offsets=1 is pure projection
    std::uint64_t seed = 0;
    bool normalize_by_hits = true;

    SamplingParams materialize() const;
};

struct PipelineConfig {
    BevGridSpec grid;         // 50x50, +-51.2 m, z in [-53,-47], n_ref 4, r 4
    int n_layers = 3;         // encoder layers, each sca (+ refine when enabled)
    ContrastConfig contrast;  // tau 0.1, 200 backgrounds, d_min 4 m
    double lambda_pas = 1.0;
    double lambda_ibcl = 2.0;
    bool refine_enabled = true;
    bool ibcl_enabled = true;
    SamplingSpec sampling;
    std::uint64_t extractor_seed = 12345;

    void validate() const;

    std::string to_json() const;
    static PipelineConfig from_json(const std::string& text);
    static PipelineConfig load(const std::string& path);
    void save(const std::string& path) const;
};

/// One frame's worth of inputs: the camera rig, per-view feature fields, 2D
/// detection boxes (predicted or ground-truth), and ground-truth 3D boxes.
struct Scene {
    std::vector<CameraModel> cams;
    std::vector<FeatureMap> feature_maps;
    std::vector<Box2D> boxes_2d;
    std::vector<Box3D> boxes_3d;
    std::int64_t frame_id = 0;

    int channels() const { return feature_maps.empty() ? 0 : feature_maps.front().channels; }
    void validate() const;
};

/// Materialized runtime parameters (sampling pattern, extractor weights,
/// optional non-zero initial queries).
struct PipelineParams {
    SamplingParams sampling = SamplingParams::identity();
    ExtractorParams extractor;
    std::optional<BevTensor> initial_queries;
};

/// Builds PipelineParams from the config seeds for a scene with the given
/// channel count.
PipelineParams make_params(const PipelineConfig& cfg, int channels);

struct LayerTiming {
    std::int64_t sca_ns = 0;
    std::int64_t refine_ns = 0;
};

struct Diagnostics {
    int fg_cells = 0;
    double fg_fraction = 0.0;
    std::int64_t mask_ns = 0;
    std::vector<LayerTiming> layers;
    ScaStats sca;
    RefineStats refine;
    int n_instances = 0;
    int n_backgrounds = 0;
    bool bg_with_replacement = false;
    int skipped_boxes = 0;  // 3D boxes outside the perception range
    double loss_ibcl = 0.0;

    std::int64_t sca_total_ns() const;
    std::int64_t refine_total_ns() const;
    std::string to_json() const;
};

struct PipelineResult {
    BevTensor bt;  // final BEV feature
    ForegroundMask mask;
    double loss_ibcl = 0.0;
    Diagnostics diag;
};

/// Full forward pass: mask once, then n_layers of cross-view attention each
/// followed (when enabled) by foreground refinement + fusion, then the
/// instance-background loss pathway on the final tensor.
PipelineResult run_pipeline(const Scene& scene, const PipelineConfig& cfg,
                            const PipelineParams& params);

/// l_base + lambda_pas * l_pas + lambda_ibcl * l_ibcl, evaluated left to right.
double total_loss(double l_base, double l_pas, double l_ibcl, const PipelineConfig& cfg);

}  // namespace bevrefine
