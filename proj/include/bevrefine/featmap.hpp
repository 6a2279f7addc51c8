#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bevrefine/geometry.hpp"

namespace bevrefine {

/// Dense per-view feature field, C planes of H_f x W_f, sampled in pixel
/// coordinates through the stride (pixels per feature cell).
struct FeatureMap {
    int view_id = 0;
    int channels = 0;
    int height = 0;  // feature-grid units
    int width = 0;
    float stride = 1.0f;
    std::vector<float> data;  // [c * height * width + y * width + x]

    static FeatureMap zeros(int view_id, int channels, int height, int width, float stride);

    float at(int c, int y, int x) const {
        return data[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
    float& at(int c, int y, int x) {
        return data[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
    const float* plane(int c) const {
        return data.data() + static_cast<std::size_t>(c) * height * width;
    }

    void validate() const;
};

/// Externally supplied sampling pattern: offsets in feature-grid units around
/// the projected point, convex weights. normalize_by_hits selects hit-count
/// normalization in the cross-view aggregation (raw sum when false).
struct SamplingParams {
    std::vector<Vec2> offsets;    // feature-grid units
    std::vector<double> weights;  // non-negative, sum to 1
    bool normalize_by_hits = true;

    int n_offsets() const { return static_cast<int>(offsets.size()); }

    /// Single zero offset with weight 1: pure projective sampling.
    static SamplingParams identity();
    /// n offsets drawn from a seeded normal of the given spread (feature units),
    /// weights softmax-normalized.
    static SamplingParams seeded(int n, std::uint64_t seed, double spread);

    void validate() const;
};

/// Bilinear interpolation at pixel (u, v); coordinates outside
/// [0, W_f-1] x [0, H_f-1] in feature units return the zero vector.
std::vector<double> bilinear_sample(const FeatureMap& fm, double u, double v);

/// Weighted sum of bilinear samples at pt + stride * offset_s. Invalid points
/// return the zero vector; a view mismatch between fm and pt is a wiring error.
std::vector<double> deform_sample(const FeatureMap& fm, const ImagePoint& pt,
                                  const SamplingParams& params);

/// In-place variant for hot loops; out is overwritten (resized to C).
/// params must already be validated.
void deform_sample_into(const FeatureMap& fm, const ImagePoint& pt, const SamplingParams& params,
                        std::vector<double>& out);

// Flat binary container: LE header {view_id:u32, C:u32, H_f:u32, W_f:u32,
// stride:f32} followed by C*H_f*W_f LE f32 values, row-major per channel.
std::vector<std::uint8_t> feature_map_to_bytes(const FeatureMap& fm);
FeatureMap feature_map_from_bytes(const std::uint8_t* data, std::size_t size);
void save_feature_map(const std::string& path, const FeatureMap& fm);
FeatureMap load_feature_map(const std::string& path);

}  // namespace bevrefine
