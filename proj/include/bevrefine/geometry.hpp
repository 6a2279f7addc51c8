#pragma once

#include <string>
#include <vector>

#include "bevrefine/errors.hpp"
#include "bevrefine/vecmath.hpp"

namespace bevrefine {

/// Depth below which a camera-frame point counts as behind the camera.
inline constexpr double kDepthEpsilon = 1e-6;

/// Pinhole camera for one view: x_cam = rotation * x_world + translation,
/// pixel = perspective division of intrinsics * x_cam.
struct CameraModel {
    Mat3 intrinsics = Mat3::identity();  // pixels; bottom row must be [0,0,1]
    Mat3 rotation = Mat3::identity();    // world -> camera, orthonormal
    Vec3 translation{};                  // camera frame, meters
    int image_width = 0;
    int image_height = 0;
    int view_id = 0;

    void validate() const;
};

/// Top-down grid over the perception range plus the vertical pillar sampling.
struct BevGridSpec {
    int h = 50;
    int w = 50;
    double range_min_x = -51.2;
    double range_max_x = 51.2;
    double range_min_y = -51.2;
    double range_max_y = 51.2;
    double z_min = -53.0;
    double z_max = -47.0;
    int n_ref = 4;     // reference points per pillar
    int refine_r = 4;  // sub-grid factor for foreground refinement

    double cell_size_x() const { return (range_max_x - range_min_x) / static_cast<double>(w); }
    double cell_size_y() const { return (range_max_y - range_min_y) / static_cast<double>(h); }
    int cells() const { return h * w; }

    void validate() const;
};

/// The vertical column of reference points above one grid cell.
struct PillarPoints {
    int grid_x = 0;
    int grid_y = 0;
    std::vector<Vec3> points;  // world meters, shared x,y; z strictly increasing
};

/// A projected pillar point. Invalidity (behind camera or outside the image
/// rectangle) is a value, not an error.
struct ImagePoint {
    double u = 0.0;
    double v = 0.0;
    double depth = 0.0;  // camera-frame z, meters
    int view_id = 0;
    bool valid = false;
};

/// Metric position of a fractional location inside cell (gx, gy);
/// frac = 0.5 is the cell center, frac = 0 the lower cell edge.
Vec2 grid_to_world(const BevGridSpec& spec, int gx, int gy, double frac_x, double frac_y);

/// Midpoint partition of [z_min, z_max] into n_ref heights.
std::vector<double> pillar_z_values(const BevGridSpec& spec);

/// Reference points of the pillar above cell (gx, gy), anchored at the cell center.
PillarPoints pillar_points(const BevGridSpec& spec, int gx, int gy);

/// Pinhole projection with perspective division. depth <= kDepthEpsilon or a
/// pixel outside [0,w) x [0,h) yields an invalid point.
ImagePoint project(const CameraModel& cam, const Vec3& world_point);

// Camera rigs serialize as a JSON array of
// {view_id, K: 9 floats row-major, R: 9 floats row-major, t: 3 floats, width, height}.
std::string rig_to_json(const std::vector<CameraModel>& cams);
std::vector<CameraModel> rig_from_json(const std::string& text);
void save_rig(const std::string& path, const std::vector<CameraModel>& cams);
std::vector<CameraModel> load_rig(const std::string& path);

}  // namespace bevrefine
