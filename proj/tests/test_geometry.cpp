#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "onix/geometry.hpp"
#include "onix/rng.hpp"

using namespace onix;

namespace {
constexpr double kPi = 3.14159265358979323846;

ViewGeometry make_view(double angle, int rows = 64, int cols = 64, double pix = 3.2e-6) {
  ViewGeometry v;
  v.angle = angle;
  v.rows = rows;
  v.cols = cols;
  v.pixel_size = pix;
  return v;
}

Vec3 random_point(Rng& rng, double extent) {
  return {rng.uniform(-extent, extent), rng.uniform(-extent, extent),
          rng.uniform(-extent, extent)};
}
}  // namespace

TEST_CASE("world_to_view maps the origin to the detector center at angle 0") {
  const auto v = make_view(0.0);
  const auto [u, vv, depth] = world_to_view(Vec3{0, 0, 0}, v);
  CHECK(u == Catch::Approx(v.cols / 2.0));
  CHECK(vv == Catch::Approx(v.rows / 2.0));
  CHECK(depth == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("quarter turn moves beam-axis points to the transverse coordinate") {
  const auto v0 = make_view(0.0);
  const auto v90 = make_view(kPi / 2.0);
  const Vec3 x{0.0, 7.0 * v0.pixel_size, 0.0};  // on the angle-0 beam axis
  const auto a = world_to_view(x, v0);
  const auto b = world_to_view(x, v90);
  // former depth becomes the u offset from center, in pixel units
  CHECK((b[0] - v90.cols / 2.0) * v90.pixel_size == Catch::Approx(a[2]));
}

TEST_CASE("world_to_view round trip and rigidity over random points") {
  Rng rng(42);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto view = make_view(rng.uniform(0.0, 2.0 * kPi));
    const Vec3 x = random_point(rng, 1e-3);
    const auto [u, v, d] = world_to_view(x, view);
    const Vec3 back = view_to_world(u, v, d, view);
    CHECK(norm(back - x) < 1e-9);
  }
  // distance preservation (transverse coords converted back to meters)
  Rng rng2(7);
  for (int trial = 0; trial < 200; ++trial) {
    const auto view = make_view(rng2.uniform(0.0, 2.0 * kPi));
    const Vec3 x1 = random_point(rng2, 1e-3);
    const Vec3 x2 = random_point(rng2, 1e-3);
    const auto a = world_to_view(x1, view);
    const auto b = world_to_view(x2, view);
    const double du = (a[0] - b[0]) * view.pixel_size;
    const double dv = (a[1] - b[1]) * view.pixel_size;
    const double dd = a[2] - b[2];
    const double dist_view = std::sqrt(du * du + dv * dv + dd * dd);
    CHECK(dist_view == Catch::Approx(norm(x1 - x2)).epsilon(1e-9));
  }
}

TEST_CASE("opposite rotations compose to the identity") {
  // the rigid part of world_to_view expressed on the (u, beam, v) frame
  const auto rotate_into_view = [](const Vec3& x, double angle) {
    ViewGeometry v = make_view(angle);
    return Vec3{dot(x, v.u_axis()), dot(x, v.beam_dir()), dot(x, v.v_axis())};
  };
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const double a = rng.uniform(0.0, 2.0 * kPi);
    const Vec3 x = random_point(rng, 1e-3);
    const Vec3 once = rotate_into_view(x, a);
    const Vec3 back = rotate_into_view(once, 2.0 * kPi - a);
    CHECK(norm(back - x) < 1e-9);
  }
}

TEST_CASE("ray_for_pixel geometry") {
  const auto grid = GridSpec::centered({64, 64, 64}, 3.2e-6);
  const Aabb box = bounding_box(grid);
  const auto v = make_view(0.0);

  SECTION("angle 0 beam points along +y") {
    const Ray r = ray_for_pixel(v, 3, 5, box);
    CHECK(r.direction.x == Catch::Approx(0.0).margin(1e-15));
    CHECK(r.direction.y == Catch::Approx(1.0));
    CHECK(r.direction.z == Catch::Approx(0.0).margin(1e-15));
  }

  SECTION("all rays of a view are parallel and unit length") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
      const auto view = make_view(rng.uniform(0.0, 2.0 * kPi));
      const Ray a = ray_for_pixel(view, 0, 0, box);
      const Ray b = ray_for_pixel(view, view.rows - 1, view.cols - 1, box);
      CHECK(std::abs(norm(a.direction) - 1.0) < 1e-12);
      CHECK(norm(a.direction - b.direction) < 1e-12);
    }
  }

  SECTION("adjacent pixels step by one pixel along the u axis") {
    const auto view = make_view(0.7);
    const Ray a = ray_for_pixel(view, 4, 7, box);
    const Ray b = ray_for_pixel(view, 4, 8, box);
    const Vec3 step = b.origin - a.origin;
    CHECK(norm(step - view.u_axis() * view.pixel_size) < 1e-12);
  }

  SECTION("origin lies before the whole box") {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
      const auto view = make_view(rng.uniform(0.0, 2.0 * kPi));
      const Ray r = ray_for_pixel(view, static_cast<int>(rng.uniform_index(view.rows)),
                                  static_cast<int>(rng.uniform_index(view.cols)), box);
      const auto hit = ray_aabb_intersect(r, box);
      if (hit) CHECK(hit->first > 0.0);
    }
  }

  SECTION("out-of-range pixel throws") {
    CHECK_THROWS_AS(ray_for_pixel(v, -1, 0, box), std::out_of_range);
    CHECK_THROWS_AS(ray_for_pixel(v, 0, v.cols, box), std::out_of_range);
  }
}

TEST_CASE("ray_aabb_intersect slab arithmetic") {
  const Aabb box{{0.0, -0.5, -0.5}, {1.0, 0.5, 0.5}};

  SECTION("axis-aligned hit") {
    const Ray r{{-1, 0, 0}, {1, 0, 0}};
    const auto hit = ray_aabb_intersect(r, box);
    REQUIRE(hit);
    CHECK(hit->first == Catch::Approx(1.0));
    CHECK(hit->second == Catch::Approx(2.0));
  }

  SECTION("parallel ray outside a face misses") {
    const Ray r{{-1, 0.75, 0}, {1, 0, 0}};
    CHECK_FALSE(ray_aabb_intersect(r, box));
  }

  SECTION("midpoint of the returned interval lies inside the box") {
    Rng rng(99);
    int hits = 0;
    for (int trial = 0; trial < 1000; ++trial) {
      Ray r;
      r.origin = {rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)};
      // aim at a random interior point so most rays hit
      const Vec3 target{rng.uniform(box.min.x, box.max.x), rng.uniform(box.min.y, box.max.y),
                        rng.uniform(box.min.z, box.max.z)};
      Vec3 d = target - r.origin;
      if (norm(d) < 1e-6) d = {1, 0, 0};
      r.direction = normalized(d);
      const auto hit = ray_aabb_intersect(r, box);
      if (!hit) continue;
      ++hits;
      const Vec3 mid = r.at(0.5 * (hit->first + hit->second));
      CHECK(box.contains(mid));
    }
    CHECK(hits > 900);
  }
}

TEST_CASE("equally spaced angle lists include both endpoints") {
  const auto a = equally_spaced_angles(8, 0.0, 140.0 * kPi / 180.0);
  REQUIRE(a.size() == 8);
  CHECK(a.front() == Catch::Approx(0.0));
  CHECK(a.back() == Catch::Approx(140.0 * kPi / 180.0));
  CHECK(a[1] - a[0] == Catch::Approx(20.0 * kPi / 180.0));
}
