#include "bevrefine/scenesim.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "json_detail.hpp"

namespace bevrefine {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr const char* kSceneSchema = "bev-scene";
constexpr int kSceneVersion = 1;
}  // namespace

void SimSpec::validate() const {
    if (n_uavs < 1) throw ConfigError("n_uavs must be >= 1");
    if (!(altitude > 0.0)) throw ConfigError("altitude must be positive");
    if (!(area_side > 0.0)) throw ConfigError("area_side must be positive");
    if (n_objects < 0) throw ConfigError("n_objects must be non-negative");
    if (!(object_size_min > 0.0) || !(object_size_max >= object_size_min))
        throw ConfigError("object size range must satisfy 0 < min <= max");
    const double margin = 0.5 * std::hypot(object_size_max, object_size_max);
    if (n_objects > 0 && margin >= 0.5 * area_side)
        throw ConfigError("objects too large to keep footprints inside the area");
    if (image_width <= 0 || image_height <= 0) throw ConfigError("image size must be positive");
    if (!(focal_px > 0.0)) throw ConfigError("focal length must be positive");
    if (feature_channels < 1) throw ConfigError("feature_channels must be >= 1");
    if (!(feature_stride > 0.0)) throw ConfigError("feature_stride must be positive");
    if (!(bump_sigma_px > 0.0)) throw ConfigError("bump_sigma_px must be positive");
    if (!std::isfinite(camera_pitch) || !std::isfinite(background_level) ||
        !std::isfinite(bump_amplitude))
        throw ConfigError("non-finite simulation parameter");
}

std::string simspec_to_json(const SimSpec& spec) {
    nlohmann::json j;
    j["n_uavs"] = spec.n_uavs;
    j["altitude"] = spec.altitude;
    j["area_side"] = spec.area_side;
    j["n_objects"] = spec.n_objects;
    j["object_size_min"] = spec.object_size_min;
    j["object_size_max"] = spec.object_size_max;
    j["camera_pitch"] = spec.camera_pitch;
    j["rng_seed"] = spec.rng_seed;
    j["image_width"] = spec.image_width;
    j["image_height"] = spec.image_height;
    j["focal_px"] = spec.focal_px;
    j["feature_channels"] = spec.feature_channels;
    j["feature_stride"] = spec.feature_stride;
    j["bump_sigma_px"] = spec.bump_sigma_px;
    j["background_level"] = spec.background_level;
    j["bump_amplitude"] = spec.bump_amplitude;
    return j.dump(2);
}

SimSpec simspec_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("sim spec JSON parse failure: ") + e.what());
    }
    SimSpec spec;
    try {
        spec.n_uavs = j.value("n_uavs", spec.n_uavs);
        spec.altitude = j.value("altitude", spec.altitude);
        spec.area_side = j.value("area_side", spec.area_side);
        spec.n_objects = j.value("n_objects", spec.n_objects);
        spec.object_size_min = j.value("object_size_min", spec.object_size_min);
        spec.object_size_max = j.value("object_size_max", spec.object_size_max);
        spec.camera_pitch = j.value("camera_pitch", spec.camera_pitch);
        spec.rng_seed = j.value("rng_seed", spec.rng_seed);
        spec.image_width = j.value("image_width", spec.image_width);
        spec.image_height = j.value("image_height", spec.image_height);
        spec.focal_px = j.value("focal_px", spec.focal_px);
        spec.feature_channels = j.value("feature_channels", spec.feature_channels);
        spec.feature_stride = j.value("feature_stride", spec.feature_stride);
        spec.bump_sigma_px = j.value("bump_sigma_px", spec.bump_sigma_px);
        spec.background_level = j.value("background_level", spec.background_level);
        spec.bump_amplitude = j.value("bump_amplitude", spec.bump_amplitude);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("sim spec JSON field error: ") + e.what());
    }
    spec.validate();
    return spec;
}

namespace {

// World -> camera rotation looking from pos toward target; camera x right,
// y down, z forward.
Mat3 look_at_rotation(const Vec3& pos, const Vec3& target) {
    const Vec3 fwd = normalized(target - pos);
    Vec3 down{0.0, 0.0, -1.0};
    double along = dot(down, fwd);
    Vec3 y{down.x - along * fwd.x, down.y - along * fwd.y, down.z - along * fwd.z};
    if (norm(y) < 1e-9) {  // looking straight down: pick +y as image down
        down = {0.0, 1.0, 0.0};
        along = dot(down, fwd);
        y = {down.x - along * fwd.x, down.y - along * fwd.y, down.z - along * fwd.z};
    }
    y = normalized(y);
    const Vec3 x = cross(y, fwd);
    Mat3 r;
    r.m = {x.x, x.y, x.z, y.x, y.y, y.z, fwd.x, fwd.y, fwd.z};
    return r;
}

Mat3 pitch_rotation(double pitch) {
    const double c = std::cos(pitch);
    const double s = std::sin(pitch);
    Mat3 r;
    r.m = {1, 0, 0, 0, c, -s, 0, s, c};
    return r;
}

std::array<Vec3, 8> box_corners(const Box3D& box) {
    const double hl = 0.5 * box.size.x;
    const double hw = 0.5 * box.size.y;
    const double hh = 0.5 * box.size.z;
    const double c = std::cos(box.yaw);
    const double s = std::sin(box.yaw);
    std::array<Vec3, 8> corners;
    int idx = 0;
    for (int ix = -1; ix <= 1; ix += 2)
        for (int iy = -1; iy <= 1; iy += 2)
            for (int iz = -1; iz <= 1; iz += 2) {
                const double lx = ix * hl;
                const double ly = iy * hw;
                corners[static_cast<std::size_t>(idx++)] = {box.center.x + c * lx - s * ly,
                                                            box.center.y + s * lx + c * ly,
                                                            box.center.z + iz * hh};
            }
    return corners;
}

}  // namespace

std::optional<Box2D> project_box_aabb(const CameraModel& cam, const Box3D& box) {
    double x_min = std::numeric_limits<double>::infinity();
    double x_max = -std::numeric_limits<double>::infinity();
    double y_min = x_min;
    double y_max = x_max;
    int in_front = 0;
    for (const Vec3& corner : box_corners(box)) {
        const ImagePoint pt = project(cam, corner);
        if (!(pt.depth > kDepthEpsilon)) continue;
        ++in_front;
        x_min = std::min(x_min, pt.u);
        x_max = std::max(x_max, pt.u);
        y_min = std::min(y_min, pt.v);
        y_max = std::max(y_max, pt.v);
    }
    if (in_front == 0) return std::nullopt;
    x_min = std::max(x_min, 0.0);
    y_min = std::max(y_min, 0.0);
    x_max = std::min(x_max, static_cast<double>(cam.image_width));
    y_max = std::min(y_max, static_cast<double>(cam.image_height));
    if (!(x_min < x_max) || !(y_min < y_max)) return std::nullopt;
    Box2D b;
    b.view_id = cam.view_id;
    b.x_min = x_min;
    b.y_min = y_min;
    b.x_max = x_max;
    b.y_max = y_max;
    b.label = box.label;
    return b;
}

Scene generate_scene(const SimSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.rng_seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    Scene scene;
    scene.frame_id = 0;

    // Cameras on a ring at the flight plane, corners of the area when n_uavs=4.
    const double half = 0.5 * spec.area_side;
    const double ring_radius = spec.n_uavs == 4 ? half * std::sqrt(2.0) : half;
    const double angle0 = spec.n_uavs == 4 ? kPi / 4.0 : 0.0;
    const Vec3 target{0.0, 0.0, -spec.altitude};
    for (int i = 0; i < spec.n_uavs; ++i) {
        const double ang = angle0 + 2.0 * kPi * i / spec.n_uavs;
        const Vec3 pos{ring_radius * std::cos(ang), ring_radius * std::sin(ang), 0.0};
        CameraModel cam;
        cam.view_id = i;
        cam.image_width = spec.image_width;
        cam.image_height = spec.image_height;
        cam.intrinsics = Mat3::identity();
        cam.intrinsics(0, 0) = spec.focal_px;
        cam.intrinsics(1, 1) = spec.focal_px;
        cam.intrinsics(0, 2) = 0.5 * spec.image_width;
        cam.intrinsics(1, 2) = 0.5 * spec.image_height;
        Mat3 rot = look_at_rotation(pos, target);
        if (spec.camera_pitch != 0.0) rot = pitch_rotation(spec.camera_pitch).matmul(rot);
        cam.rotation = rot;
        const Vec3 rp = rot.apply(pos);
        cam.translation = {-rp.x, -rp.y, -rp.z};
        cam.validate();
        scene.cams.push_back(cam);
    }

    // Ground objects with footprints inside the area; per-object channel
    // amplitudes encode identity in the feature fields.
    std::vector<std::vector<double>> amplitudes;
    for (int i = 0; i < spec.n_objects; ++i) {
        Box3D box;
        const double span = spec.object_size_max - spec.object_size_min;
        box.size = {spec.object_size_min + span * unit(rng),
                    spec.object_size_min + span * unit(rng),
                    spec.object_size_min + span * unit(rng)};
        const double margin = 0.5 * std::hypot(box.size.x, box.size.y);
        const double lo = -(half - margin);
        const double hi = half - margin;
        box.center = {lo + (hi - lo) * unit(rng), lo + (hi - lo) * unit(rng),
                      -spec.altitude + 0.5 * box.size.z};
        box.yaw = -kPi + 2.0 * kPi * unit(rng);
        if (box.yaw <= -kPi) box.yaw = kPi;
        box.label = i % 16;
        box.validate();
        scene.boxes_3d.push_back(box);

        std::vector<double> amp(static_cast<std::size_t>(spec.feature_channels));
        for (double& a : amp) a = spec.bump_amplitude * gauss(rng);
        amplitudes.push_back(std::move(amp));
    }

    // Exact projected 2D boxes, dropped when fully invisible in a view.
    for (const auto& box : scene.boxes_3d) {
        for (const auto& cam : scene.cams) {
            if (auto b = project_box_aabb(cam, box)) scene.boxes_2d.push_back(*b);
        }
    }

    // Feature fields: background constant plus a Gaussian bump per object at
    // its projected centroid.
    const int fh = static_cast<int>(std::floor(spec.image_height / spec.feature_stride));
    const int fw = static_cast<int>(std::floor(spec.image_width / spec.feature_stride));
    const double sigma = spec.bump_sigma_px / spec.feature_stride;
    const double cutoff = 4.0 * sigma;
    for (const auto& cam : scene.cams) {
        FeatureMap fm = FeatureMap::zeros(cam.view_id, spec.feature_channels, fh, fw,
                                          static_cast<float>(spec.feature_stride));
        std::fill(fm.data.begin(), fm.data.end(), static_cast<float>(spec.background_level));
        for (std::size_t oi = 0; oi < scene.boxes_3d.size(); ++oi) {
            const ImagePoint pt = project(cam, scene.boxes_3d[oi].center);
            if (!(pt.depth > kDepthEpsilon)) continue;
            const double cx = pt.u / spec.feature_stride;
            const double cy = pt.v / spec.feature_stride;
            const int x0 = std::max(0, static_cast<int>(std::floor(cx - cutoff)));
            const int x1 = std::min(fw - 1, static_cast<int>(std::ceil(cx + cutoff)));
            const int y0 = std::max(0, static_cast<int>(std::floor(cy - cutoff)));
            const int y1 = std::min(fh - 1, static_cast<int>(std::ceil(cy + cutoff)));
            const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
            for (int y = y0; y <= y1; ++y) {
                for (int x = x0; x <= x1; ++x) {
                    const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                    const double g = std::exp(-d2 * inv2s2);
                    for (int c = 0; c < spec.feature_channels; ++c)
                        fm.at(c, y, x) += static_cast<float>(amplitudes[oi][static_cast<std::size_t>(c)] * g);
                }
            }
        }
        scene.feature_maps.push_back(std::move(fm));
    }

    scene.validate();
    return scene;
}

ForegroundMask expected_foreground(const Scene& scene, const BevGridSpec& grid) {
    grid.validate();
    ForegroundMask mask = ForegroundMask::zeros(grid.h, grid.w);
    const double csx = (grid.range_max_x - grid.range_min_x) / static_cast<double>(grid.w);
    const double csy = (grid.range_max_y - grid.range_min_y) / static_cast<double>(grid.h);
    const double zstep = (grid.z_max - grid.z_min) / static_cast<double>(grid.n_ref);

    for (int gy = 0; gy < grid.h; ++gy) {
        for (int gx = 0; gx < grid.w; ++gx) {
            const double px = grid.range_min_x + (static_cast<double>(gx) + 0.5) * csx;
            const double py = grid.range_min_y + (static_cast<double>(gy) + 0.5) * csy;
            std::int32_t hits = 0;
            for (const auto& cam : scene.cams) {
                const auto& r = cam.rotation.m;
                const auto& k = cam.intrinsics.m;
                for (int j = 1; j <= grid.n_ref; ++j) {
                    const double pz = grid.z_min + (static_cast<double>(j) - 0.5) * zstep;
                    const double cx = r[0] * px + r[1] * py + r[2] * pz + cam.translation.x;
                    const double cy = r[3] * px + r[4] * py + r[5] * pz + cam.translation.y;
                    const double cz = r[6] * px + r[7] * py + r[8] * pz + cam.translation.z;
                    if (!(cz > kDepthEpsilon)) continue;
                    const double u = (k[0] * cx + k[1] * cy + k[2] * cz) / cz;
                    const double v = (k[3] * cx + k[4] * cy + k[5] * cz) / cz;
                    if (!(u >= 0.0 && u < static_cast<double>(cam.image_width) && v >= 0.0 &&
                          v < static_cast<double>(cam.image_height)))
                        continue;
                    for (const auto& box : scene.boxes_2d) {
                        if (box.view_id != cam.view_id) continue;
                        if (u >= box.x_min && u <= box.x_max && v >= box.y_min && v <= box.y_max) {
                            ++hits;
                            break;
                        }
                    }
                }
            }
            mask.hit_counts[static_cast<std::size_t>(gy) * grid.w + gx] = hits;
            mask.values[static_cast<std::size_t>(gy) * grid.w + gx] = hits > 0 ? 1 : 0;
        }
    }
    return mask;
}

std::string save_scene(const Scene& scene, const std::string& dir, const std::string& json_name) {
    scene.validate();
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    nlohmann::json j;
    j["schema"] = kSceneSchema;
    j["version"] = kSceneVersion;
    j["frame_id"] = scene.frame_id;
    nlohmann::json cams = nlohmann::json::array();
    for (const auto& cam : scene.cams) cams.push_back(detail::camera_json(cam));
    j["cameras"] = cams;
    j["boxes_2d"] = nlohmann::json::parse(boxes_to_json(scene.boxes_2d));
    nlohmann::json b3 = nlohmann::json::array();
    for (const auto& b : scene.boxes_3d)
        b3.push_back({{"center", {b.center.x, b.center.y, b.center.z}},
                      {"size", {b.size.x, b.size.y, b.size.z}},
                      {"yaw", b.yaw},
                      {"label", b.label}});
    j["boxes_3d"] = b3;

    nlohmann::json fmaps = nlohmann::json::array();
    for (const auto& fm : scene.feature_maps) {
        char name[32];
        std::snprintf(name, sizeof(name), "view_%03d.fmap", fm.view_id);
        save_feature_map((fs::path(dir) / name).string(), fm);
        fmaps.push_back(name);
    }
    j["feature_maps"] = fmaps;

    const std::string json_path = (fs::path(dir) / json_name).string();
    std::ofstream out(json_path, std::ios::binary);
    if (!out) throw IoError("cannot open " + json_path + " for writing");
    out << j.dump(2) << "\n";
    if (!out) throw IoError("failed writing " + json_path);
    return json_path;
}

Scene load_scene(const std::string& json_path) {
    std::ifstream in(json_path, std::ios::binary);
    if (!in) throw IoError("cannot open " + json_path);
    std::stringstream ss;
    ss << in.rdbuf();
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(ss.str());
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("scene JSON parse failure: ") + e.what());
    }

    Scene scene;
    try {
        if (j.value("schema", std::string{}) != kSceneSchema)
            throw IoError("not a scene document (schema mismatch)");
        if (j.value("version", -1) != kSceneVersion)
            throw IoError("unsupported scene version " + std::to_string(j.value("version", -1)));
        scene.frame_id = j.value("frame_id", std::int64_t{0});
        for (const auto& cj : j.at("cameras")) scene.cams.push_back(detail::camera_parse(cj));
        scene.boxes_2d = boxes_from_json(j.at("boxes_2d").dump());
        for (const auto& bj : j.at("boxes_3d")) {
            Box3D b;
            const auto c = bj.at("center").get<std::array<double, 3>>();
            const auto s = bj.at("size").get<std::array<double, 3>>();
            b.center = {c[0], c[1], c[2]};
            b.size = {s[0], s[1], s[2]};
            b.yaw = bj.at("yaw").get<double>();
            b.label = bj.value("label", 0);
            b.validate();
            scene.boxes_3d.push_back(b);
        }
        const auto base = std::filesystem::path(json_path).parent_path();
        for (const auto& fj : j.at("feature_maps")) {
            const std::filesystem::path p(fj.get<std::string>());
            scene.feature_maps.push_back(
                load_feature_map(p.is_absolute() ? p.string() : (base / p).string()));
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("scene JSON field error: ") + e.what());
    }
    scene.validate();
    return scene;
}

}  // namespace bevrefine
