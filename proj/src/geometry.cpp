#include "bevrefine/geometry.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace bevrefine {

void CameraModel::validate() const {
    if (image_width <= 0 || image_height <= 0)
        throw ConfigError("camera " + std::to_string(view_id) + ": non-positive image size");
    if (view_id < 0) throw ConfigError("negative view_id");
    if (!intrinsics.finite() || !rotation.finite() || !is_finite(translation))
        throw ConfigError("camera " + std::to_string(view_id) + ": non-finite parameters");
    if (intrinsics(0, 0) <= 0.0 || intrinsics(1, 1) <= 0.0)
        throw ConfigError("camera " + std::to_string(view_id) + ": non-positive focal length");
    if (intrinsics(2, 0) != 0.0 || intrinsics(2, 1) != 0.0 || intrinsics(2, 2) != 1.0)
        throw ConfigError("camera " + std::to_string(view_id) +
                          ": intrinsics bottom row must be [0,0,1]");
    if (orthonormality_error(rotation) > 1e-9)
        throw ConfigError("camera " + std::to_string(view_id) + ": rotation not orthonormal");
}

void BevGridSpec::validate() const {
    if (h <= 0 || w <= 0) throw ConfigError("grid dimensions must be positive");
    if (!(range_max_x > range_min_x) || !(range_max_y > range_min_y))
        throw ConfigError("perception range must have positive extent");
    if (!(z_max > z_min)) throw ConfigError("pillar z range must have positive extent");
    if (n_ref < 1) throw ConfigError("n_ref must be >= 1");
    if (refine_r < 1) throw ConfigError("refine_r must be >= 1");
    if (!(cell_size_x() > 0.0) || !(cell_size_y() > 0.0))
        throw ConfigError("cell size must be strictly positive");
}

Vec2 grid_to_world(const BevGridSpec& spec, int gx, int gy, double frac_x, double frac_y) {
    if (gx < 0 || gx >= spec.w || gy < 0 || gy >= spec.h)
        throw std::out_of_range("grid index (" + std::to_string(gx) + "," + std::to_string(gy) +
                                ") outside " + std::to_string(spec.w) + "x" + std::to_string(spec.h));
    if (!(frac_x >= 0.0 && frac_x < 1.0) || !(frac_y >= 0.0 && frac_y < 1.0))
        throw std::invalid_argument("cell fraction must lie in [0,1)");
    const double csx = (spec.range_max_x - spec.range_min_x) / static_cast<double>(spec.w);
    const double csy = (spec.range_max_y - spec.range_min_y) / static_cast<double>(spec.h);
    return {spec.range_min_x + (static_cast<double>(gx) + frac_x) * csx,
            spec.range_min_y + (static_cast<double>(gy) + frac_y) * csy};
}

std::vector<double> pillar_z_values(const BevGridSpec& spec) {
    const double step = (spec.z_max - spec.z_min) / static_cast<double>(spec.n_ref);
    std::vector<double> zs(static_cast<std::size_t>(spec.n_ref));
    for (int j = 1; j <= spec.n_ref; ++j)
        zs[static_cast<std::size_t>(j - 1)] = spec.z_min + (static_cast<double>(j) - 0.5) * step;
    return zs;
}

PillarPoints pillar_points(const BevGridSpec& spec, int gx, int gy) {
    const Vec2 anchor = grid_to_world(spec, gx, gy, 0.5, 0.5);
    PillarPoints p;
    p.grid_x = gx;
    p.grid_y = gy;
    const std::vector<double> zs = pillar_z_values(spec);
    p.points.reserve(zs.size());
    for (double z : zs) p.points.push_back({anchor.x, anchor.y, z});
    return p;
}

ImagePoint project(const CameraModel& cam, const Vec3& world_point) {
    ImagePoint ip;
    ip.view_id = cam.view_id;
    const Vec3 c = {cam.rotation.m[0] * world_point.x + cam.rotation.m[1] * world_point.y +
                        cam.rotation.m[2] * world_point.z + cam.translation.x,
                    cam.rotation.m[3] * world_point.x + cam.rotation.m[4] * world_point.y +
                        cam.rotation.m[5] * world_point.z + cam.translation.y,
                    cam.rotation.m[6] * world_point.x + cam.rotation.m[7] * world_point.y +
                        cam.rotation.m[8] * world_point.z + cam.translation.z};
    ip.depth = c.z;
    if (!(c.z > kDepthEpsilon)) {
        ip.valid = false;
        return ip;
    }
    // Bottom row of K is [0,0,1], so the homogeneous divisor is the depth itself.
    ip.u = (cam.intrinsics.m[0] * c.x + cam.intrinsics.m[1] * c.y + cam.intrinsics.m[2] * c.z) / c.z;
    ip.v = (cam.intrinsics.m[3] * c.x + cam.intrinsics.m[4] * c.y + cam.intrinsics.m[5] * c.z) / c.z;
    ip.valid = ip.u >= 0.0 && ip.u < static_cast<double>(cam.image_width) && ip.v >= 0.0 &&
               ip.v < static_cast<double>(cam.image_height);
    return ip;
}

namespace {

nlohmann::json camera_to_json(const CameraModel& cam) {
    nlohmann::json j;
    j["view_id"] = cam.view_id;
    j["K"] = cam.intrinsics.m;
    j["R"] = cam.rotation.m;
    j["t"] = std::array<double, 3>{cam.translation.x, cam.translation.y, cam.translation.z};
    j["width"] = cam.image_width;
    j["height"] = cam.image_height;
    return j;
}

CameraModel camera_from_json(const nlohmann::json& j) {
    CameraModel cam;
    cam.view_id = j.at("view_id").get<int>();
    const auto k = j.at("K").get<std::array<double, 9>>();
    const auto r = j.at("R").get<std::array<double, 9>>();
    const auto t = j.at("t").get<std::array<double, 3>>();
    cam.intrinsics.m = k;
    cam.rotation.m = r;
    cam.translation = {t[0], t[1], t[2]};
    cam.image_width = j.at("width").get<int>();
    cam.image_height = j.at("height").get<int>();
    cam.validate();
    return cam;
}

}  // namespace

std::string rig_to_json(const std::vector<CameraModel>& cams) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& cam : cams) arr.push_back(camera_to_json(cam));
    return arr.dump(2);
}

std::vector<CameraModel> rig_from_json(const std::string& text) {
    nlohmann::json arr;
    try {
        arr = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("rig JSON parse failure: ") + e.what());
    }
    if (!arr.is_array()) throw IoError("rig JSON must be an array of cameras");
    std::vector<CameraModel> cams;
    try {
        for (const auto& j : arr) cams.push_back(camera_from_json(j));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("rig JSON field error: ") + e.what());
    }
    return cams;
}

void save_rig(const std::string& path, const std::vector<CameraModel>& cams) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << rig_to_json(cams) << "\n";
}

std::vector<CameraModel> load_rig(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return rig_from_json(ss.str());
}

// Camera JSON helpers shared with the scene container.
namespace detail {
nlohmann::json camera_json(const CameraModel& cam) { return camera_to_json(cam); }
CameraModel camera_parse(const nlohmann::json& j) { return camera_from_json(j); }
}  // namespace detail

}  // namespace bevrefine
