#include "bevrefine/maskgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <unordered_map>

#include <json.hpp>

namespace bevrefine {

void Box2D::validate() const {
    if (!(x_min < x_max) || !(y_min < y_max))
        throw ConfigError("degenerate 2D box: min must be strictly below max");
    if (!std::isfinite(x_min) || !std::isfinite(x_max) || !std::isfinite(y_min) ||
        !std::isfinite(y_max))
        throw ConfigError("non-finite 2D box");
}

ForegroundMask ForegroundMask::zeros(int h, int w) {
    ForegroundMask m;
    m.h = h;
    m.w = w;
    m.values.assign(static_cast<std::size_t>(h) * w, 0);
    m.hit_counts.assign(static_cast<std::size_t>(h) * w, 0);
    return m;
}

int ForegroundMask::fg_count() const {
    return static_cast<int>(std::count(values.begin(), values.end(), std::uint8_t{1}));
}

bool point_in_box(const ImagePoint& pt, const Box2D& box) {
    return pt.valid && pt.view_id == box.view_id && pt.u >= box.x_min && pt.u <= box.x_max &&
           pt.v >= box.y_min && pt.v <= box.y_max;
}

ForegroundMask build_mask(const BevGridSpec& spec, const std::vector<CameraModel>& cams,
                          const std::vector<Box2D>& boxes) {
    spec.validate();
    if (cams.empty()) throw ConfigError("build_mask: empty camera rig");
    for (const auto& cam : cams) cam.validate();

    std::unordered_map<int, std::size_t> view_index;
    for (std::size_t i = 0; i < cams.size(); ++i) {
        if (!view_index.emplace(cams[i].view_id, i).second)
            throw ConfigError("duplicate view_id " + std::to_string(cams[i].view_id));
    }
    // Group boxes per camera; a box naming an unknown view is a wiring fault.
    std::vector<std::vector<const Box2D*>> per_view(cams.size());
    for (const auto& box : boxes) {
        box.validate();
        auto it = view_index.find(box.view_id);
        if (it == view_index.end())
            throw ConfigError("box references view_id " + std::to_string(box.view_id) +
                              " with no camera");
        per_view[it->second].push_back(&box);
    }

    ForegroundMask mask = ForegroundMask::zeros(spec.h, spec.w);
    const std::vector<double> zs = pillar_z_values(spec);
    const int cells = spec.cells();

#pragma omp parallel for schedule(static)
    for (int idx = 0; idx < cells; ++idx) {
        const int gx = idx % spec.w;
        const int gy = idx / spec.w;
        const Vec2 anchor = grid_to_world(spec, gx, gy, 0.5, 0.5);
        std::int32_t hits = 0;
        for (std::size_t ci = 0; ci < cams.size(); ++ci) {
            if (per_view[ci].empty()) continue;
            for (double z : zs) {
                const ImagePoint pt = project(cams[ci], {anchor.x, anchor.y, z});
                if (!pt.valid) continue;
                for (const Box2D* box : per_view[ci]) {
                    if (pt.u >= box->x_min && pt.u <= box->x_max && pt.v >= box->y_min &&
                        pt.v <= box->y_max) {
                        ++hits;
                        break;  // a (view, point) pair counts once
                    }
                }
            }
        }
        mask.hit_counts[static_cast<std::size_t>(idx)] = hits;
        mask.values[static_cast<std::size_t>(idx)] = hits > 0 ? 1 : 0;
    }
    return mask;
}

std::string boxes_to_json(const std::vector<Box2D>& boxes) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& b : boxes) {
        arr.push_back({{"view_id", b.view_id},
                       {"x_min", b.x_min},
                       {"y_min", b.y_min},
                       {"x_max", b.x_max},
                       {"y_max", b.y_max},
                       {"label", b.label}});
    }
    return arr.dump(2);
}

std::vector<Box2D> boxes_from_json(const std::string& text) {
    nlohmann::json arr;
    try {
        arr = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("box JSON parse failure: ") + e.what());
    }
    if (!arr.is_array()) throw IoError("box JSON must be an array");
    std::vector<Box2D> boxes;
    try {
        for (const auto& j : arr) {
            Box2D b;
            b.view_id = j.at("view_id").get<int>();
            b.x_min = j.at("x_min").get<double>();
            b.y_min = j.at("y_min").get<double>();
            b.x_max = j.at("x_max").get<double>();
            b.y_max = j.at("y_max").get<double>();
            b.label = j.value("label", -1);
            b.validate();
            boxes.push_back(b);
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("box JSON field error: ") + e.what());
    }
    return boxes;
}

std::string mask_to_json(const ForegroundMask& mask) {
    nlohmann::json j;
    j["h"] = mask.h;
    j["w"] = mask.w;
    j["values"] = mask.values;
    j["hit_counts"] = mask.hit_counts;
    return j.dump();
}

ForegroundMask mask_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("mask JSON parse failure: ") + e.what());
    }
    ForegroundMask m;
    try {
        m.h = j.at("h").get<int>();
        m.w = j.at("w").get<int>();
        m.values = j.at("values").get<std::vector<std::uint8_t>>();
        m.hit_counts = j.at("hit_counts").get<std::vector<std::int32_t>>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("mask JSON field error: ") + e.what());
    }
    const std::size_t n = static_cast<std::size_t>(m.h) * static_cast<std::size_t>(m.w);
    if (m.values.size() != n || m.hit_counts.size() != n)
        throw IoError("mask JSON size mismatch");
    return m;
}

void save_mask_pgm(const std::string& path, const ForegroundMask& mask) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "P5\n" << mask.w << " " << mask.h << "\n255\n";
    std::vector<std::uint8_t> row(static_cast<std::size_t>(mask.w));
    for (int y = 0; y < mask.h; ++y) {
        for (int x = 0; x < mask.w; ++x)
            row[static_cast<std::size_t>(x)] = mask.at(x, y) ? 255 : 0;
        out.write(reinterpret_cast<const char*>(row.data()), mask.w);
    }
    if (!out) throw IoError("failed writing " + path);
}

}  // namespace bevrefine
