#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bevrefine/pipeline.hpp"

namespace bevrefine {

/// Procedural multi-UAV scene: cameras on a ring (corners when n_uavs = 4)
/// at the flight altitude looking at the area center, ground objects with
/// exact projected 2D boxes, and feature maps synthesized as Gaussian bumps
/// at each object's projected centroid.
///
/// World frame: z = 0 at the flight plane, ground at z = -altitude (so the
/// default pillar range brackets the ground).
struct SimSpec {
    int n_uavs = 4;
    double altitude = 50.0;    // meters above ground
    double area_side = 100.0;  // meters
    int n_objects = 6;
    double object_size_min = 1.5;  // meters, per axis
    double object_size_max = 4.0;
    double camera_pitch = 0.0;  // extra tilt about the camera x axis, radians
    std::uint64_t rng_seed = 1;

    // Imaging / feature-field configuration (arbitrary simulated optics).
    int image_width = 800;
    int image_height = 448;
    double focal_px = 400.0;
    int feature_channels = 32;
    double feature_stride = 8.0;
    double bump_sigma_px = 24.0;     // Gaussian bump width, pixels
    double background_level = 0.1;   // constant base value of every channel
    double bump_amplitude = 1.0;     // scale of per-object channel amplitudes

    void validate() const;
};

std::string simspec_to_json(const SimSpec& spec);
SimSpec simspec_from_json(const std::string& text);

/// Deterministic scene generation from the seed.
Scene generate_scene(const SimSpec& spec);

/// Pixel AABB of a 3D box: projects the 8 corners, keeps those in front of
/// the camera, clips to the image. nullopt when fully invisible.
std::optional<Box2D> project_box_aabb(const CameraModel& cam, const Box3D& box);

/// Independent triple-loop foreground oracle (cell x view x reference point)
/// with its own straight-line projection arithmetic. Serial; used by tests
/// and the kernel benchmark, never by the pipeline.
ForegroundMask expected_foreground(const Scene& scene, const BevGridSpec& grid);

// Scene container: a schema-versioned JSON document referencing one binary
// feature container per view. save_scene returns the JSON path.
std::string save_scene(const Scene& scene, const std::string& dir,
                       const std::string& json_name = "scene.json");
Scene load_scene(const std::string& json_path);

}  // namespace bevrefine
