#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bevrefine/geometry.hpp"

namespace bevrefine {

/// Axis-aligned 2D detection box in pixel coordinates of one view.
/// Membership is closed on all edges.
struct Box2D {
    int view_id = 0;
    double x_min = 0.0;
    double y_min = 0.0;
    double x_max = 0.0;
    double y_max = 0.0;
    int label = -1;

    void validate() const;
};

/// Binary foreground map over the BEV grid. values(x,y)=1 iff at least one
/// (view, reference point) projection of the cell's pillar lands in a box of
/// that view; hit_counts records how many such pairs landed.
struct ForegroundMask {
    int h = 0;
    int w = 0;
    std::vector<std::uint8_t> values;   // row-major [y*w + x], 0/1
    std::vector<std::int32_t> hit_counts;

    static ForegroundMask zeros(int h, int w);

    std::uint8_t at(int gx, int gy) const { return values[static_cast<std::size_t>(gy) * w + gx]; }
    std::int32_t hits(int gx, int gy) const {
        return hit_counts[static_cast<std::size_t>(gy) * w + gx];
    }
    int fg_count() const;
};

/// Closed-box membership test; invalid points are never inside.
bool point_in_box(const ImagePoint& pt, const Box2D& box);

/// Projects every pillar reference point of every cell into every view and
/// marks cells whose projections land inside any box of the matching view.
/// Boxes naming a view with no camera are a configuration error.
ForegroundMask build_mask(const BevGridSpec& spec, const std::vector<CameraModel>& cams,
                          const std::vector<Box2D>& boxes);

// Boxes serialize as a JSON array of {view_id, x_min, y_min, x_max, y_max, label}.
std::string boxes_to_json(const std::vector<Box2D>& boxes);
std::vector<Box2D> boxes_from_json(const std::string& text);

// Masks export as JSON (exact) and binary PGM, 0/255 (visual inspection).
std::string mask_to_json(const ForegroundMask& mask);
ForegroundMask mask_from_json(const std::string& text);
void save_mask_pgm(const std::string& path, const ForegroundMask& mask);

}  // namespace bevrefine
