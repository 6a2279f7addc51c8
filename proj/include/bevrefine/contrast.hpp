#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bevrefine/attention.hpp"

namespace bevrefine {

/// Ground-truth 3D box: center (meters), size (length, width, height), yaw
/// about +z in radians.
struct Box3D {
    Vec3 center{};
    Vec3 size{1.0, 1.0, 1.0};
    double yaw = 0.0;
    int label = 0;

    void validate() const;
};

/// Inclusive rectangle of grid cells.
struct GridRect {
    int x0 = 0;
    int y0 = 0;
    int x1 = 0;
    int y1 = 0;

    int width() const { return x1 - x0 + 1; }
    int height() const { return y1 - y0 + 1; }
};

struct ContrastConfig {
    double tau = 0.1;        // temperature
    int n_background = 200;  // background samples per scene
    double d_min = 4.0;      // meters from the foreground region
    int pool_s = 7;          // adaptive-pool side
    int patch_b = 3;         // background patch side, grid cells
    int embed_dim = 128;
    std::uint64_t rng_seed = 1;
    bool class_conditional_positives = false;  // restrict pairs to equal labels

    void validate() const;
};

/// Weights of the instance extractor: per-location two-layer perceptron
/// (C -> C -> 1) whose logits are softmax-normalized into a spatial attention
/// map, plus the shared linear projection into the embedding space.
struct ExtractorParams {
    int channels = 0;
    int embed_dim = 0;
    int pool_s = 0;
    std::vector<double> w1;    // C x C, row-major
    std::vector<double> b1;    // C
    std::vector<double> w2;    // C
    double b2 = 0.0;
    std::vector<double> proj;  // embed_dim x C, row-major

    static ExtractorParams seeded(int channels, int embed_dim, int pool_s, std::uint64_t seed);
    static ExtractorParams zeros(int channels, int embed_dim, int pool_s);
    void validate() const;
};

struct InstanceFeature {
    std::optional<Box3D> source_box;
    std::vector<double> embedding;          // embed_dim, l2-normalized
    std::vector<double> attention_weights;  // pool_s^2, non-negative, sums to 1
    GridRect crop_rect;
    std::vector<double> pooled_feature;     // C, pre-projection aggregate
};

struct BackgroundFeature {
    Vec2 sample_point{};            // world meters (cell center)
    std::vector<double> embedding;  // embed_dim, l2-normalized
    GridRect patch_rect;
};

struct BackgroundSamples {
    std::vector<BackgroundFeature> features;
    bool with_replacement = false;  // sampled with replacement (demand exceeded eligible cells)
};

/// Axis-aligned grid-cell bounding rectangle of the yaw-rotated box footprint,
/// clipped to the grid. Throws std::out_of_range when the footprint misses the
/// perception range entirely.
GridRect box_to_bev_rect(const BevGridSpec& spec, const Box3D& box);

/// Union of footprint rect cells over all boxes; boxes outside the range are
/// skipped. Row-major cell order, duplicates removed.
std::vector<std::pair<int, int>> footprint_cells(const BevGridSpec& spec,
                                                 const std::vector<Box3D>& boxes);

/// Crop -> adaptive average pool to s x s -> perceptron logits -> softmax
/// attention -> weighted channel aggregate -> projection -> l2 normalization.
InstanceFeature extract_instance(const BevTensor& bev, const GridRect& rect,
                                 const ExtractorParams& params, const Box3D* source = nullptr);

/// Seeded uniform draw of background cells whose centers lie farther than
/// d_min (meters, Euclidean) from every foreground cell center. Draws without
/// replacement while possible, with replacement (flagged) otherwise.
BackgroundSamples sample_background(const BevGridSpec& spec, const BevTensor& bev,
                                    const std::vector<std::pair<int, int>>& fg_cells,
                                    const ContrastConfig& cfg, const ExtractorParams& params);

struct ContrastLossResult {
    double loss = 0.0;
    std::vector<std::vector<double>> grad_instances;
    std::vector<std::vector<double>> grad_backgrounds;
};

/// Loss over similarity matrices: positives are all ordered instance pairs
/// (i, j), i != j; each pair's denominator adds anchor i's instance-background
/// terms. s_pos is n_i x n_i (diagonal ignored), s_neg is n_i x n_b, both
/// already divided by the temperature. Fewer than two instances yield 0.
double loss_from_similarities(const std::vector<double>& s_pos, const std::vector<double>& s_neg,
                              int n_i, int n_b);

/// Loss value on raw embedding vectors; similarity is dot / tau (the cosine,
/// for the unit-norm embeddings the types guarantee).
double contrast_loss_value(const std::vector<std::vector<double>>& instance_embeddings,
                           const std::vector<std::vector<double>>& background_embeddings,
                           double tau);

/// Loss plus the analytic gradient with respect to every embedding, treating
/// the loss as a function of the (already normalized) embedding coordinates.
ContrastLossResult contrast_loss_grad(const std::vector<std::vector<double>>& instance_embeddings,
                                      const std::vector<std::vector<double>>& background_embeddings,
                                      double tau);

/// Typed front end over InstanceFeature / BackgroundFeature lists.
ContrastLossResult contrast_loss(const std::vector<InstanceFeature>& instances,
                                 const std::vector<BackgroundFeature>& backgrounds,
                                 const ContrastConfig& cfg);

/// Central-difference gradient of contrast_loss_value (step h on each raw
/// coordinate, no re-normalization). Independent check of the analytic path.
ContrastLossResult finite_difference_gradient(
    const std::vector<std::vector<double>>& instance_embeddings,
    const std::vector<std::vector<double>>& background_embeddings, double tau, double h = 1e-5);

struct GradCheckReport {
    double max_rel_err = 0.0;
    int configs = 0;
    std::uint64_t components = 0;
};

/// Seeded sweep of random configurations (2-10 instances, 5-200 backgrounds,
/// tau in {0.05, 0.1, 1.0}); relative error per component is
/// |a - f| / max(1e-6, |a| + |f|).
GradCheckReport run_gradient_check(std::uint64_t seed, int n_configs, double h = 1e-5);

// Test-fixture export: {embedding: [...], source: {...}}.
std::string instance_to_json(const InstanceFeature& f);
std::string background_to_json(const BackgroundFeature& f);

}  // namespace bevrefine
