#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "onix/phantom.hpp"
#include "onix/projector.hpp"
#include "onix/trainer.hpp"

using namespace onix;

namespace {
constexpr double kPi = 3.14159265358979323846;

PhantomSpec tiny_phantom_spec(std::uint64_t seed) {
  PhantomSpec s;
  s.grid = GridSpec::centered({16, 16, 16}, 3.2e-6);
  s.cylinder_radius = 3.125;
  s.cylinder_height = 16.0;
  s.min_semi_axis = 1.5;
  s.max_semi_axis = 5.0;
  s.min_ellipsoids = 2;
  s.max_ellipsoids = 4;
  s.seed = seed;
  return s;
}

ProjectionStack tiny_stack(std::uint64_t seed, int n_views = 4) {
  auto [vol, ells] = generate_phantom(tiny_phantom_spec(seed));
  ProjectorConfig pc;
  pc.n_depth = 32;
  return project_dataset(vol, equally_spaced_angles(n_views, 0.0, 140.0 * kPi / 180.0), pc);
}

FieldConfig tiny_field_config() {
  FieldConfig cfg;
  cfg.encoding_levels = 2;
  cfg.mlp_width = 8;
  cfg.shared_blocks = 3;
  cfg.head_blocks = 2;
  cfg.latent_dim = 8;
  cfg.encoder_stages = 3;
  cfg.output_channels = 2;
  cfg.world_bounds = bounding_box(GridSpec::centered({16, 16, 16}, 3.2e-6));
  cfg.output_scale = {1e-7, 1e-8};
  return cfg;
}

TrainConfig tiny_train_config() {
  TrainConfig cfg;
  cfg.rays_per_iter = 24;
  cfg.depth_samples = 8;
  cfg.batch_objects = 2;
  cfg.constraint_count = 2;
  cfg.epochs = 4;
  cfg.seed = 5;
  cfg.points_per_chunk = 96;
  return cfg;
}

}  // namespace

TEST_CASE("constraint subset selection") {
  Rng rng(1);

  SECTION("M equal to K returns the full set") {
    CHECK(select_constraints(5, 5, rng) == std::vector<int>{0, 1, 2, 3, 4});
  }

  SECTION("M=1 returns a singleton") {
    const auto s = select_constraints(8, 1, rng);
    REQUIRE(s.size() == 1);
    CHECK(s[0] >= 0);
    CHECK(s[0] < 8);
  }

  SECTION("M greater than K is rejected") {
    CHECK_THROWS_AS(select_constraints(3, 4, rng), std::invalid_argument);
  }

  SECTION("each view appears with frequency M/K over many draws") {
    std::array<int, 8> counts{};
    const int draws = 10000;
    for (int d = 0; d < draws; ++d)
      for (int v : select_constraints(8, 4, rng)) counts[static_cast<std::size_t>(v)]++;
    for (int v = 0; v < 8; ++v) {
      const double freq = static_cast<double>(counts[static_cast<std::size_t>(v)]) / draws;
      CHECK(freq == Catch::Approx(0.5).margin(0.02));
    }
  }
}

TEST_CASE("ray sampler follows the gradient-magnitude PDF") {
  SECTION("constant image gives a uniform PDF") {
    ProjectionStack stack = tiny_stack(1, 2);
    for (auto& img : stack.images) {
      std::fill(img.attenuation.begin(), img.attenuation.end(), 0.25);
      std::fill(img.phase.begin(), img.phase.end(), 0.7);
    }
    RaySampler sampler(stack, 1e-3);
    const double uniform = 1.0 / (16.0 * 16.0);
    for (int i = 0; i < 16; i += 5)
      for (int j = 0; j < 16; j += 3)
        CHECK(sampler.probability(0, i, j) == Catch::Approx(uniform));
  }

  SECTION("edge pixels are drawn more often, chi-square consistent with the PDF") {
    // single bright vertical edge
    ProjectionStack stack = tiny_stack(2, 2);
    for (auto& img : stack.images) {
      for (int i = 0; i < 16; ++i)
        for (int j = 0; j < 16; ++j) {
          img.attenuation[img.pixel_index(i, j)] = j >= 8 ? 1.0 : 0.0;
          img.phase[img.pixel_index(i, j)] = 0.0;
        }
    }
    RaySampler sampler(stack, 1e-3);
    Rng rng(3);
    const int draws = 40000;
    std::vector<int> counts(256, 0);
    for (int d = 0; d < draws; ++d) {
      const auto s = sampler.draw_from_view(0, rng);
      counts[static_cast<std::size_t>(s.i) * 16 + s.j]++;
    }
    // edge columns (j in {7,8}) vs flat interior
    double edge_freq = 0.0, flat_freq = 0.0;
    int n_edge = 0, n_flat = 0;
    for (int i = 0; i < 16; ++i)
      for (int j = 0; j < 16; ++j) {
        const double f = static_cast<double>(counts[static_cast<std::size_t>(i) * 16 + j]) / draws;
        if (j == 7 || j == 8) {
          edge_freq += f;
          ++n_edge;
        } else if (j < 6 || j > 9) {
          flat_freq += f;
          ++n_flat;
        }
      }
    CHECK(edge_freq / n_edge > 5.0 * (flat_freq / n_flat));

    // chi-square of observed counts against the sampler's own PDF,
    // 255 dof at 1% significance (Wilson-Hilferty critical value ~ 310)
    double chi2 = 0.0;
    for (int i = 0; i < 16; ++i)
      for (int j = 0; j < 16; ++j) {
        const double expect = sampler.probability(0, i, j) * draws;
        const double obs = counts[static_cast<std::size_t>(i) * 16 + j];
        chi2 += (obs - expect) * (obs - expect) / expect;
      }
    CHECK(chi2 < 310.5);
  }
}

TEST_CASE("stratified depth sampling") {
  Rng rng(4);

  SECTION("two samples land one per half") {
    for (int trial = 0; trial < 50; ++trial) {
      const auto d = sample_depths(1.0, 3.0, 2, rng);
      CHECK(d.ts[0] >= 1.0);
      CHECK(d.ts[0] < 2.0);
      CHECK(d.ts[1] >= 2.0);
      CHECK(d.ts[1] < 3.0);
    }
  }

  SECTION("weights sum to the full interval") {
    const auto d = sample_depths(0.2, 1.7, 256, rng);
    d.validate();
    double sum = 0.0;
    for (double w : d.weights()) sum += w;
    CHECK(sum == Catch::Approx(1.5).epsilon(1e-9));
  }

  SECTION("fixed seed reproduces the samples") {
    Rng a(9), b(9);
    CHECK(sample_depths(0.0, 1.0, 16, a).ts == sample_depths(0.0, 1.0, 16, b).ts);
  }

  SECTION("degenerate interval is rejected") {
    CHECK_THROWS_AS(sample_depths(1.0, 1.0, 4, rng), std::invalid_argument);
  }
}

TEST_CASE("loss definition") {
  SECTION("perfect prediction gives zero") {
    std::vector<std::array<double, 2>> c = {{0.1, 0.2}, {0.3, 0.4}};
    CHECK(loss_mean_squared(c, c, 2) == 0.0);
  }

  SECTION("single ray, single channel, difference 2 gives 4") {
    CHECK(loss_mean_squared({{2.0, 0.0}}, {{0.0, 0.0}}, 1) == 4.0);
  }

  SECTION("matches an elementwise recomputation on random data") {
    Rng rng(6);
    std::vector<std::array<double, 2>> pred(37), meas(37);
    for (std::size_t r = 0; r < 37; ++r) {
      pred[r] = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
      meas[r] = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
    }
    double manual = 0.0;
    for (std::size_t r = 0; r < 37; ++r)
      manual += (pred[r][0] - meas[r][0]) * (pred[r][0] - meas[r][0]) +
                (pred[r][1] - meas[r][1]) * (pred[r][1] - meas[r][1]);
    manual /= 37.0;
    CHECK(loss_mean_squared(pred, meas, 2) == Catch::Approx(manual).epsilon(1e-12));
  }

  SECTION("length mismatch is an error") {
    CHECK_THROWS_AS(loss_mean_squared({{0, 0}}, {}, 2), std::invalid_argument);
  }
}

TEST_CASE("bookkeeping helpers") {
  CHECK(iterations_per_epoch(1000, 2) == 500);
  CHECK(iterations_per_epoch(20, 2) == 10);
  CHECK(iterations_per_epoch(5, 2) == 3);

  TrainConfig cfg;
  cfg.lr = 0.005;
  cfg.lr_drop_enabled = true;
  cfg.lr_drop_epoch = 1000;
  cfg.lr_drop_factor = 0.1;
  CHECK(lr_at_epoch(cfg, 0) == 0.005);
  CHECK(lr_at_epoch(cfg, 999) == 0.005);
  CHECK(lr_at_epoch(cfg, 1000) == Catch::Approx(0.0005));
  cfg.lr_drop_enabled = false;
  CHECK(lr_at_epoch(cfg, 5000) == 0.005);
}

TEST_CASE("training runs, learns, and is reproducible") {
  std::vector<ProjectionStack> dataset = {tiny_stack(11), tiny_stack(12)};
  auto cfg = tiny_train_config();
  auto model = FieldModel<double>::init(tiny_field_config(), 77);
  const auto result = train(dataset, cfg, model);

  REQUIRE(result.iterations_per_epoch == 1);
  REQUIRE(result.history.size() == 4);

  SECTION("loss history is finite and decreasing overall") {
    for (const auto& rec : result.history) CHECK(std::isfinite(rec.loss));
    CHECK(result.history.back().loss < result.history.front().loss);
  }

  SECTION("every iteration samples at least one non-constraint ray") {
    for (const auto& rec : result.history) CHECK(rec.non_constraint_rays >= 1);
  }

  SECTION("same seed gives a bit-identical loss history and model") {
    auto model2 = FieldModel<double>::init(tiny_field_config(), 77);
    const auto result2 = train(dataset, cfg, model2);
    REQUIRE(result2.history.size() == result.history.size());
    for (std::size_t i = 0; i < result.history.size(); ++i)
      CHECK(result2.history[i].loss == result.history[i].loss);
    for (const auto& [name, p] : model.params.params)
      CHECK(p.data == model2.params.params.at(name).data);
  }
}

TEST_CASE("training validation errors") {
  auto model = FieldModel<double>::init(tiny_field_config(), 1);
  auto cfg = tiny_train_config();

  SECTION("empty dataset") {
    CHECK_THROWS_AS(train<double>({}, cfg, model), std::invalid_argument);
  }

  SECTION("too few views for the constraint count") {
    cfg.constraint_count = 4;  // stacks have exactly 4 views -> need >= 5
    std::vector<ProjectionStack> dataset = {tiny_stack(13)};
    CHECK_THROWS_AS(train(dataset, cfg, model), std::invalid_argument);
  }
}

TEST_CASE("inference from a stack") {
  std::vector<ProjectionStack> dataset = {tiny_stack(21)};
  auto model = FieldModel<double>::init(tiny_field_config(), 31);
  const GridSpec grid = GridSpec::centered({8, 8, 8}, 6.4e-6);

  SECTION("constraint order does not change the volume") {
    const auto a = infer(model, dataset[0], {0, 2}, grid);
    const auto b = infer(model, dataset[0], {2, 0}, grid);
    for (std::size_t p = 0; p < a.beta.size(); ++p)
      CHECK(a.beta[p] == Catch::Approx(b.beta[p]).margin(1e-12 * std::abs(a.beta[p]) + 1e-30));
  }

  SECTION("different combinations usually differ") {
    const auto a = infer(model, dataset[0], {0, 1}, grid);
    const auto b = infer(model, dataset[0], {2, 3}, grid);
    double diff = 0.0;
    for (std::size_t p = 0; p < a.beta.size(); ++p) diff += std::abs(a.beta[p] - b.beta[p]);
    CHECK(diff > 0.0);
  }

  SECTION("untrained model still yields a finite, non-negative volume") {
    const auto vol = infer(model, dataset[0], {0, 1, 2}, grid);
    CHECK(vol.finite());
    for (double v : vol.delta) CHECK(v >= 0.0);
    for (double v : vol.beta) CHECK(v >= 0.0);
  }

  SECTION("invalid indices are rejected") {
    CHECK_THROWS_AS(infer(model, dataset[0], {7}, grid), std::invalid_argument);
    CHECK_THROWS_AS(infer(model, dataset[0], {}, grid), std::invalid_argument);
  }
}
