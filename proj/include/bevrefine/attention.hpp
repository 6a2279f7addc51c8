#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bevrefine/featmap.hpp"
#include "bevrefine/maskgen.hpp"

namespace bevrefine {

/// Pipeline stage a BEV tensor belongs to.
enum class StageTag : std::uint32_t {
    Queries = 0,  // initial per-cell query state
    Coarse = 1,   // after uniform cross-view attention
    Refined = 2,  // after foreground sub-grid refinement + fusion
    Final = 3,    // encoder output
};

/// H x W x C BEV feature state. Stored cell-major (per-cell channel vectors
/// contiguous); the binary container uses f32 channel planes.
struct BevTensor {
    int h = 0;
    int w = 0;
    int channels = 0;
    StageTag stage = StageTag::Queries;
    std::vector<double> data;  // [(y*w + x) * channels + c]

    static BevTensor zeros(int h, int w, int channels, StageTag stage = StageTag::Queries);

    std::span<double> cell(int gx, int gy) {
        return {data.data() + (static_cast<std::size_t>(gy) * w + gx) * channels,
                static_cast<std::size_t>(channels)};
    }
    std::span<const double> cell(int gx, int gy) const {
        return {data.data() + (static_cast<std::size_t>(gy) * w + gx) * channels,
                static_cast<std::size_t>(channels)};
    }
    double at(int gx, int gy, int c) const { return cell(gx, gy)[static_cast<std::size_t>(c)]; }

    bool dims_match(const BevGridSpec& spec) const { return h == spec.h && w == spec.w; }
    void validate() const;
};

/// Offset of sub-cell (m, n) within a parent cell, meters relative to the
/// parent cell center. Sub-cell centers tile the cell uniformly at fractions
/// ((m-0.5)/r, (n-0.5)/r).
struct SubGridOffset {
    int m = 1;
    int n = 1;
    double delta_x = 0.0;
    double delta_y = 0.0;
};

std::vector<SubGridOffset> sub_grid_offsets(const BevGridSpec& spec);

struct ScaStats {
    std::uint64_t pairs_total = 0;  // (view, reference point) pairs attempted
    std::uint64_t hits_valid = 0;   // pairs with a valid projection
};

struct RefineStats {
    std::uint64_t cells_refined = 0;
    std::uint64_t sub_evals = 0;  // sub-cell attention evaluations
    ScaStats sca;
};

/// Cross-view aggregation for one cell at a fractional in-cell position: sums
/// deformable samples over every (camera, pillar point) pair, normalized by
/// the number of valid hits (zero hits yield the zero vector).
std::vector<double> sca_cell(const BevGridSpec& spec, const std::vector<CameraModel>& cams,
                             const std::vector<FeatureMap>& fms, const SamplingParams& params,
                             int gx, int gy, double frac_x, double frac_y);

/// Full-grid cross-view attention with residual update:
/// out(x,y) = queries(x,y) + sca_cell(x,y) at the cell center.
BevTensor sca(const BevGridSpec& spec, const std::vector<CameraModel>& cams,
              const std::vector<FeatureMap>& fms, const SamplingParams& params,
              const BevTensor& queries, ScaStats* stats = nullptr);

/// Mean of sca_cell over the r x r sub-cell centers of one cell; r = 1
/// degenerates to sca_cell at the center, bit for bit.
std::vector<double> refined_sca_cell(const BevGridSpec& spec, const std::vector<CameraModel>& cams,
                                     const std::vector<FeatureMap>& fms,
                                     const SamplingParams& params, int gx, int gy);

/// Foreground cells get the refined residual update
/// out(x,y) = coarse(x,y) + refined_sca_cell(x,y); background cells are copied
/// bit for bit. With an all-one mask and r = 1 this equals sca(coarse).
BevTensor refine_and_fuse(const BevGridSpec& spec, const std::vector<CameraModel>& cams,
                          const std::vector<FeatureMap>& fms, const SamplingParams& params,
                          const BevTensor& coarse, const ForegroundMask& mask,
                          RefineStats* stats = nullptr);

// Same flat binary container as FeatureMap with header
// {stage_tag:u32, C:u32, H:u32, W:u32} and an f32 payload, row-major per channel.
std::vector<std::uint8_t> bev_to_bytes(const BevTensor& t);
BevTensor bev_from_bytes(const std::uint8_t* data, std::size_t size);
void save_bev(const std::string& path, const BevTensor& t);
BevTensor load_bev(const std::string& path);

}  // namespace bevrefine
