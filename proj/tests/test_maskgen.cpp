#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "bevrefine/maskgen.hpp"
#include "bevrefine/scenesim.hpp"
#include "test_common.hpp"

using namespace bevrefine;
using testutil::rng_t;

namespace {

BevGridSpec grid_spec(int side = 20, int n_ref = 4) {
    BevGridSpec s;
    s.h = s.w = side;
    s.n_ref = n_ref;
    return s;
}

Box2D full_image_box(const CameraModel& cam) {
    Box2D b;
    b.view_id = cam.view_id;
    b.x_min = 0;
    b.y_min = 0;
    b.x_max = cam.image_width;
    b.y_max = cam.image_height;
    return b;
}

Box2D random_box(rng_t& rng, const CameraModel& cam) {
    Box2D b;
    b.view_id = cam.view_id;
    const double x0 = testutil::uniform(rng, 0, cam.image_width - 2);
    const double y0 = testutil::uniform(rng, 0, cam.image_height - 2);
    b.x_min = x0;
    b.y_min = y0;
    b.x_max = x0 + testutil::uniform(rng, 1, cam.image_width - x0);
    b.y_max = y0 + testutil::uniform(rng, 1, cam.image_height - y0);
    return b;
}

// Membership evaluation for an explicit list of pillar heights; backs the
// sampling-union property below.
ForegroundMask mask_for_heights(const BevGridSpec& spec, const std::vector<CameraModel>& cams,
                                const std::vector<Box2D>& boxes, const std::vector<double>& zs) {
    ForegroundMask mask = ForegroundMask::zeros(spec.h, spec.w);
    for (int gy = 0; gy < spec.h; ++gy)
        for (int gx = 0; gx < spec.w; ++gx) {
            const Vec2 anchor = grid_to_world(spec, gx, gy, 0.5, 0.5);
            std::int32_t hits = 0;
            for (const auto& cam : cams)
                for (double z : zs) {
                    const ImagePoint pt = project(cam, {anchor.x, anchor.y, z});
                    for (const auto& box : boxes)
                        if (point_in_box(pt, box)) {
                            ++hits;
                            break;
                        }
                }
            mask.hit_counts[static_cast<std::size_t>(gy) * spec.w + gx] = hits;
            mask.values[static_cast<std::size_t>(gy) * spec.w + gx] = hits > 0;
        }
    return mask;
}

}  // namespace

TEST_CASE("point_in_box is closed and respects validity") {
    Box2D box;
    box.view_id = 0;
    box.x_min = 0;
    box.y_min = 0;
    box.x_max = 10;
    box.y_max = 10;

    CHECK(point_in_box(testutil::valid_point(5, 5), box));
    CHECK(point_in_box(testutil::valid_point(10, 10), box));  // closed boundary
    CHECK(point_in_box(testutil::valid_point(0, 0), box));
    CHECK_FALSE(point_in_box(testutil::valid_point(10.0001, 5), box));

    ImagePoint behind = testutil::valid_point(5, 5);
    behind.valid = false;
    CHECK_FALSE(point_in_box(behind, box));

    CHECK_FALSE(point_in_box(testutil::valid_point(5, 5, /*view=*/1), box));
}

TEST_CASE("empty box list yields the all-zero mask") {
    const auto spec = grid_spec();
    const std::vector<CameraModel> cams{testutil::nadir_camera()};
    const ForegroundMask mask = build_mask(spec, cams, {});
    CHECK(mask.fg_count() == 0);
    for (auto h : mask.hit_counts) CHECK(h == 0);
}

TEST_CASE("full-image box marks exactly the cells with valid projections") {
    const auto spec = grid_spec(30);
    const CameraModel cam = testutil::nadir_camera();
    const std::vector<CameraModel> cams{cam};
    const std::vector<Box2D> boxes{full_image_box(cam)};
    const ForegroundMask mask = build_mask(spec, cams, boxes);

    Scene scene;
    scene.cams = cams;
    scene.boxes_2d = boxes;
    const ForegroundMask oracle = expected_foreground(scene, spec);
    CHECK(mask.values == oracle.values);
    CHECK(mask.hit_counts == oracle.hit_counts);

    for (int gy = 0; gy < spec.h; ++gy)
        for (int gx = 0; gx < spec.w; ++gx) {
            bool any_valid = false;
            for (const Vec3& p : pillar_points(spec, gx, gy).points)
                any_valid = any_valid || project(cam, p).valid;
            CHECK(static_cast<bool>(mask.at(gx, gy)) == any_valid);
        }
}

TEST_CASE("a view without boxes contributes nothing") {
    const auto spec = grid_spec();
    rng_t rng(41);
    const CameraModel cam0 = testutil::nadir_camera(0);
    CameraModel cam1 = testutil::nadir_camera(1, 250.0);
    cam1.translation = {3.0, -2.0, 0.0};

    std::vector<Box2D> boxes{random_box(rng, cam1), random_box(rng, cam1)};
    const ForegroundMask both = build_mask(spec, {cam0, cam1}, boxes);
    const ForegroundMask single = build_mask(spec, {cam1}, boxes);
    CHECK(both.values == single.values);
    CHECK(both.hit_counts == single.hit_counts);
}

TEST_CASE("boxes naming an unknown view are a configuration error") {
    const auto spec = grid_spec();
    Box2D box = full_image_box(testutil::nadir_camera(0));
    box.view_id = 9;
    CHECK_THROWS_AS(build_mask(spec, {testutil::nadir_camera(0)}, {box}), ConfigError);
    CHECK_THROWS_AS(build_mask(spec, {}, {}), ConfigError);
}

TEST_CASE("mask is monotone under box-set union") {
    rng_t rng(17);
    for (int trial = 0; trial < 10; ++trial) {
        const auto spec = grid_spec(16, 1 + static_cast<int>(rng() % 4));
        const CameraModel cam0 = testutil::nadir_camera(0);
        const CameraModel cam1 = testutil::nadir_camera(1, 350.0);
        std::vector<Box2D> base;
        for (int i = 0; i < 3; ++i) base.push_back(random_box(rng, cam0));
        std::vector<Box2D> extended = base;
        extended.push_back(random_box(rng, cam1));
        extended.push_back(random_box(rng, cam0));

        const ForegroundMask a = build_mask(spec, {cam0, cam1}, base);
        const ForegroundMask b = build_mask(spec, {cam0, cam1}, extended);
        for (std::size_t i = 0; i < a.values.size(); ++i) CHECK(b.values[i] >= a.values[i]);
    }
}

TEST_CASE("union of two pillar samplings ORs the masks") {
    rng_t rng(19);
    const CameraModel cam = testutil::nadir_camera();
    std::vector<Box2D> boxes;
    for (int i = 0; i < 4; ++i) boxes.push_back(random_box(rng, cam));

    auto spec_a = grid_spec(24, 2);
    auto spec_b = grid_spec(24, 5);
    const ForegroundMask mask_a = build_mask(spec_a, {cam}, boxes);
    const ForegroundMask mask_b = build_mask(spec_b, {cam}, boxes);

    std::vector<double> zs = pillar_z_values(spec_a);
    const auto zb = pillar_z_values(spec_b);
    zs.insert(zs.end(), zb.begin(), zb.end());
    const ForegroundMask unioned = mask_for_heights(spec_a, {cam}, boxes, zs);

    for (std::size_t i = 0; i < unioned.values.size(); ++i)
        CHECK(unioned.values[i] == (mask_a.values[i] | mask_b.values[i]));
}

TEST_CASE("mask JSON round-trip is exact") {
    rng_t rng(3);
    const auto spec = grid_spec(12);
    const CameraModel cam = testutil::nadir_camera();
    const ForegroundMask mask = build_mask(spec, {cam}, {random_box(rng, cam)});
    const ForegroundMask back = mask_from_json(mask_to_json(mask));
    CHECK(back.h == mask.h);
    CHECK(back.w == mask.w);
    CHECK(back.values == mask.values);
    CHECK(back.hit_counts == mask.hit_counts);
    CHECK_THROWS_AS(mask_from_json("[]"), IoError);
}

TEST_CASE("PGM export writes a parseable binary file") {
    const auto spec = grid_spec(8);
    const CameraModel cam = testutil::nadir_camera();
    const ForegroundMask mask = build_mask(spec, {cam}, {full_image_box(cam)});
    const std::string path = "test_mask_out.pgm";
    save_mask_pgm(path, mask);

    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    CHECK(magic == "P5");
    CHECK(w == mask.w);
    CHECK(h == mask.h);
    CHECK(maxval == 255);
    in.get();  // single whitespace after the header
    std::vector<std::uint8_t> payload(static_cast<std::size_t>(w) * h);
    in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    REQUIRE(in.gcount() == static_cast<std::streamsize>(payload.size()));
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            CHECK(payload[static_cast<std::size_t>(y) * w + x] == (mask.at(x, y) ? 255 : 0));
    std::remove(path.c_str());
}

TEST_CASE("boxes JSON round-trip") {
    rng_t rng(29);
    const CameraModel cam = testutil::nadir_camera();
    std::vector<Box2D> boxes{random_box(rng, cam), random_box(rng, cam)};
    boxes[0].label = 7;
    const auto back = boxes_from_json(boxes_to_json(boxes));
    REQUIRE(back.size() == boxes.size());
    for (std::size_t i = 0; i < boxes.size(); ++i) {
        CHECK(back[i].view_id == boxes[i].view_id);
        CHECK(back[i].x_min == boxes[i].x_min);
        CHECK(back[i].x_max == boxes[i].x_max);
        CHECK(back[i].y_min == boxes[i].y_min);
        CHECK(back[i].y_max == boxes[i].y_max);
        CHECK(back[i].label == boxes[i].label);
    }
}
