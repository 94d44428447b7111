// SPDX-License-Identifier: Apache-2.0
#include "unitar/dmd.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "unitar/errors.hpp"

using namespace unitar;

namespace {

// Independent oracle: score = d/dx log N(x; a*mu, a^2 s2 + b^2) by central
// differences on the log-density.
double log_density_score(double x, double mu, double sigma2,
                         const NoiseKernel& kernel, double tau) {
  const double a = kernel.alpha(tau);
  const double b = kernel.beta(tau);
  const double var = a * a * sigma2 + b * b;
  auto logp = [&](double v) {
    return -0.5 * (v - a * mu) * (v - a * mu) / var;
  };
  const double h = 1e-5;
  return (logp(x + h) - logp(x - h)) / (2.0 * h);
}

GenConfig sweep_config() {
  GenConfig cfg;
  cfg.scheme = CubeScheme{1, 2, 2};
  cfg.channels = 1;
  cfg.d_model = 8;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.max_unit_tokens = 8;
  cfg.param_seed = 11;
  return cfg;
}

}  // namespace

TEST_SUITE_BEGIN("dmd");

TEST_CASE("noise kernel is variance preserving") {
  NoiseKernel kernel;
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const double tau = kernel.sample_tau(rng);
    CHECK(tau >= kernel.tau_min);
    CHECK(tau <= kernel.tau_max);
    const double a = kernel.alpha(tau), b = kernel.beta(tau);
    CHECK(a * a + b * b == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("analytic score: standard normal gives s = -x") {
  const Scorer sc =
      make_analytic_scorer(ScorerRole::Real, AnalyticGaussian{{0.0}, 1.0});
  NoiseKernel kernel;
  for (double tau : {0.05, 0.3, 0.7, 0.95}) {
    const std::vector<double> x{1.7, -0.4, 0.0};
    const auto s = score(sc, kernel, x, tau);
    for (size_t i = 0; i < x.size(); ++i)
      CHECK(s[i] == doctest::Approx(-x[i]).epsilon(1e-12));
  }
}

TEST_CASE("analytic score vanishes at the scaled mode") {
  const Scorer sc =
      make_analytic_scorer(ScorerRole::Real, AnalyticGaussian{{2.5}, 0.7});
  NoiseKernel kernel;
  const double tau = 0.4;
  const std::vector<double> x{kernel.alpha(tau) * 2.5};
  CHECK(score(sc, kernel, x, tau)[0] == 0.0);
}

TEST_CASE("analytic score matches the log-density derivative oracle") {
  const double mu = 2.0, sigma2 = 1.0;
  const Scorer sc =
      make_analytic_scorer(ScorerRole::Real, AnalyticGaussian{{mu}, sigma2});
  NoiseKernel kernel;
  // small tau: the noised density approaches the data density, so the
  // score approaches -(x - 2)
  {
    const double tau = 1e-6;
    const std::vector<double> x{3.3};
    CHECK(score(sc, kernel, x, tau)[0] ==
          doctest::Approx(-(3.3 - 2.0)).epsilon(1e-6));
  }
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    const double tau = rng.uniform(0.02, 0.98);
    const double x = rng.normal() * 2.0;
    const auto s = score(sc, kernel, std::vector<double>{x}, tau);
    CHECK(s[0] ==
          doctest::Approx(log_density_score(x, mu, sigma2, kernel, tau))
              .epsilon(1e-5));
  }
}

TEST_CASE("matched scorers give an exactly zero bracket") {
  const AnalyticGaussian g{{1.3}, 2.0};
  const Scorer real = make_analytic_scorer(ScorerRole::Real, g);
  Scorer gen_full = make_analytic_scorer(ScorerRole::GeneratedFull, g);
  GeneratedScorerSet gens{&gen_full, nullptr, nullptr};
  NoiseKernel kernel;
  Rng rng(9);
  for (int i = 0; i < 50; ++i) {
    std::vector<double> x{rng.normal() * 3.0, rng.normal()};
    const DmdDraw draw =
        dmd_gradient(x, real, gens, kernel, SymmetricMode::Full, rng);
    for (double b : draw.bracket) CHECK(b == 0.0);
    for (double g2 : draw.grad_x) CHECK(g2 == 0.0);
  }
}

TEST_CASE("1-D mean shift: bracket equals alpha * (mu_d - mu_g)") {
  const double mu_d = 1.0, mu_g = -0.5;
  const Scorer real =
      make_analytic_scorer(ScorerRole::Real, AnalyticGaussian{{mu_d}, 1.0});
  Scorer gen =
      make_analytic_scorer(ScorerRole::GeneratedFull, AnalyticGaussian{{mu_g}, 1.0});
  NoiseKernel kernel;
  // equal variances cancel the x-dependent terms, so the identity is
  // pointwise, not just in expectation
  Rng rng(4);
  double mc_sum = 0.0, alpha_sum = 0.0;
  const int n_draws = 10000;
  GeneratedScorerSet gens{&gen, nullptr, nullptr};
  for (int i = 0; i < n_draws; ++i) {
    std::vector<double> x{mu_g + rng.normal()};
    const DmdDraw draw =
        dmd_gradient(x, real, gens, kernel, SymmetricMode::Full, rng);
    const double a = kernel.alpha(draw.tau);
    CHECK(draw.bracket[0] == doctest::Approx(a * (mu_d - mu_g)).epsilon(1e-9));
    mc_sum += draw.bracket[0];
    alpha_sum += a;
  }
  CHECK(mc_sum / n_draws ==
        doctest::Approx(alpha_sum / n_draws * (mu_d - mu_g)).epsilon(1e-6));
}

TEST_CASE("mean update sign follows sign(mu_d - mu_g)") {
  NoiseKernel kernel;
  Rng rng(6);
  for (double gap : {0.5, -0.5, 2.0, -1.5}) {
    const double mu_g = 0.3;
    const double mu_d = mu_g + gap;
    const Scorer real =
        make_analytic_scorer(ScorerRole::Real, AnalyticGaussian{{mu_d}, 1.0});
    Scorer gen = make_analytic_scorer(ScorerRole::GeneratedFull,
                                      AnalyticGaussian{{mu_g}, 1.0});
    GeneratedScorerSet gens{&gen, nullptr, nullptr};
    double grad_sum = 0.0;
    for (int i = 0; i < 2000; ++i) {
      std::vector<double> x{mu_g + rng.normal()};
      grad_sum +=
          dmd_gradient(x, real, gens, kernel, SymmetricMode::Full, rng)
              .grad_x[0];
    }
    // descent moves the mean along -grad
    CHECK(std::signbit(-grad_sum) == std::signbit(gap));
  }
}

TEST_CASE("unused scorers cannot influence the gradient") {
  const Scorer real =
      make_analytic_scorer(ScorerRole::Real, AnalyticGaussian{{1.0}, 1.0});
  Scorer fwd = make_affine_scorer(ScorerRole::GeneratedForward, FrameScheme{},
                                  1, 1, 1, 1);
  Scorer bwd_a = make_affine_scorer(ScorerRole::GeneratedBackward,
                                    FrameScheme{}, 1, 1, 1, 1);
  Scorer bwd_b = bwd_a;
  bwd_b.learned->aff_w[0] = 123.0;
  bwd_b.learned->aff_v[0] = -9.0;
  NoiseKernel kernel;
  const std::vector<double> x{0.7};
  Rng r1(5), r2(5);
  const DmdDraw a = dmd_gradient(x, real, {nullptr, &fwd, &bwd_a}, kernel,
                                 SymmetricMode::ForwardOnly, r1);
  const DmdDraw b = dmd_gradient(x, real, {nullptr, &fwd, &bwd_b}, kernel,
                                 SymmetricMode::ForwardOnly, r2);
  CHECK(std::memcmp(a.grad_x.data(), b.grad_x.data(),
                    a.grad_x.size() * sizeof(double)) == 0);
}

TEST_CASE("forward+backward averages the two generated scores") {
  const Scorer real =
      make_analytic_scorer(ScorerRole::Real, AnalyticGaussian{{0.0}, 1.0});
  Scorer fwd = make_affine_scorer(ScorerRole::GeneratedForward, FrameScheme{},
                                  1, 1, 1, 1);
  Scorer bwd = make_affine_scorer(ScorerRole::GeneratedBackward, FrameScheme{},
                                  1, 1, 1, 1);
  fwd.learned->aff_v[0] = 1.0;   // s_fwd = 1
  bwd.learned->aff_v[0] = -3.0;  // s_bwd = -3, average -1
  NoiseKernel kernel;
  const std::vector<double> x{0.0};
  Rng rng(8);
  const DmdDraw draw = dmd_gradient(x, real, {nullptr, &fwd, &bwd}, kernel,
                                    SymmetricMode::ForwardPlusBackward, rng);
  // s_real(x~) = -x~; bracket = -x~ - (-1) = -x~ + 1
  const double a = kernel.alpha(draw.tau);
  const double x_noisy = -(draw.bracket[0] - 1.0);
  CHECK(draw.grad_x[0] == doctest::Approx(-a * (-x_noisy + 1.0)).epsilon(1e-12));
}

TEST_CASE("dmd_gradient validates roles and required scorers") {
  const Scorer real =
      make_analytic_scorer(ScorerRole::Real, AnalyticGaussian{{0.0}, 1.0});
  Scorer gen = make_analytic_scorer(ScorerRole::GeneratedFull,
                                    AnalyticGaussian{{0.0}, 1.0});
  NoiseKernel kernel;
  Rng rng(1);
  const std::vector<double> x{0.0};
  CHECK_THROWS_AS(dmd_gradient(x, gen, {&gen, nullptr, nullptr}, kernel,
                               SymmetricMode::Full, rng),
                  ConfigError);
  CHECK_THROWS_AS(dmd_gradient(x, real, {nullptr, nullptr, nullptr}, kernel,
                               SymmetricMode::ForwardOnly, rng),
                  ConfigError);
  CHECK_THROWS_AS(dmd_gradient(x, real, {nullptr, &gen, nullptr}, kernel,
                               SymmetricMode::ForwardOnly, rng),
                  ConfigError);  // wrong role in the forward slot
}

TEST_CASE("non-finite samples surface as numeric errors") {
  const Scorer real =
      make_analytic_scorer(ScorerRole::Real, AnalyticGaussian{{0.0}, 1.0});
  Scorer gen = make_analytic_scorer(ScorerRole::GeneratedFull,
                                    AnalyticGaussian{{0.0}, 1.0});
  GeneratedScorerSet gens{&gen, nullptr, nullptr};
  NoiseKernel kernel;
  Rng rng(1);
  const std::vector<double> x{std::numeric_limits<double>::infinity()};
  CHECK_THROWS_AS(dmd_gradient(x, real, gens, kernel, SymmetricMode::Full, rng),
                  NumericError);
}

TEST_CASE("dsm: fitted affine scorer recovers the unit-variance slope") {
  NoiseKernel kernel;
  Rng rng(100);
  std::vector<std::vector<double>> samples(512);
  for (auto& s : samples) s = {rng.normal()};
  Scorer sc = make_affine_scorer(ScorerRole::GeneratedForward, FrameScheme{},
                                 1, 1, 1, 1);
  Rng fit_rng(7);
  const DsmOptions opts{2000, 0.02, 64};
  const auto trace = fit_generated_scorer(sc, samples, kernel, opts, fit_rng);
  // closed-form minimizer for N(0,1) data under the variance-preserving
  // kernel: s(x~) = -x~ at every tau
  CHECK(std::abs(sc.learned->aff_w[0] - (-1.0)) < 0.1);
  // smoothed loss decreases over the run
  auto window_mean = [&](size_t begin) {
    double acc = 0.0;
    for (size_t i = begin; i < begin + 50; ++i) acc += trace[i];
    return acc / 50.0;
  };
  CHECK(window_mean(trace.size() - 50) < window_mean(0));
}

TEST_CASE("dsm: zero steps leave the scorer bit-identical") {
  Scorer sc = make_affine_scorer(ScorerRole::GeneratedForward, FrameScheme{},
                                 1, 1, 1, 1);
  sc.learned->aff_w[0] = 0.25;
  const Scorer before = sc;
  NoiseKernel kernel;
  Rng rng(2);
  const auto trace = fit_generated_scorer(
      sc, {{0.5}}, kernel, DsmOptions{0, 1e-2, 8}, rng);
  CHECK(trace.empty());
  CHECK(std::memcmp(sc.learned->aff_w.data(), before.learned->aff_w.data(),
                    sizeof(double)) == 0);
}

TEST_CASE("dsm: huge learning rate raises a training error") {
  NoiseKernel kernel;
  Rng rng(3);
  std::vector<std::vector<double>> samples(64);
  for (auto& s : samples) s = {rng.normal()};
  Scorer sc = make_affine_scorer(ScorerRole::GeneratedForward, FrameScheme{},
                                 1, 1, 1, 1);
  CHECK_THROWS_AS(
      fit_generated_scorer(sc, samples, kernel, DsmOptions{400, 1e6, 8}, rng),
      TrainingError);
}

TEST_CASE("dsm: role and architecture prerequisites") {
  NoiseKernel kernel;
  Rng rng(4);
  Scorer real = make_analytic_scorer(ScorerRole::Real, AnalyticGaussian{});
  CHECK_THROWS_AS(
      fit_generated_scorer(real, {{0.0}}, kernel, DsmOptions{1, 1e-2, 1}, rng),
      ConfigError);
  Scorer analytic_gen =
      make_analytic_scorer(ScorerRole::GeneratedFull, AnalyticGaussian{});
  CHECK_THROWS_AS(fit_generated_scorer(analytic_gen, {{0.0}}, kernel,
                                       DsmOptions{1, 1e-2, 1}, rng),
                  ConfigError);
}

TEST_CASE("scorer evaluated against the wrong mask direction is rejected") {
  const Scorer fwd = make_affine_scorer(ScorerRole::GeneratedForward,
                                        FrameScheme{}, 2, 1, 1, 1);
  NoiseKernel kernel;
  const std::vector<double> x{0.1, 0.2};
  CHECK_NOTHROW(score(fwd, kernel, x, 0.5, MaskDirection::Forward));
  CHECK_THROWS_AS(score(fwd, kernel, x, 0.5, MaskDirection::Backward),
                  ConfigError);
}

TEST_CASE("causal scorers respect their mask over the sample") {
  // frame scheme over 4 frames, one token per frame
  const UnitScheme scheme = FrameScheme{};
  NoiseKernel kernel;
  Rng rng(5);
  for (bool tiny_net : {false, true}) {
    Scorer fwd =
        tiny_net ? make_tiny_net_scorer(ScorerRole::GeneratedForward, scheme,
                                        4, 1, 1, 1, 8, 1, 2, 4, 3)
                 : make_affine_scorer(ScorerRole::GeneratedForward, scheme, 4,
                                      1, 1, 1);
    if (!tiny_net) {
      for (auto& v : fwd.learned->aff_w) v = rng.normal();
      for (auto& v : fwd.learned->aff_u) v = rng.normal();
    }
    std::vector<double> x{0.3, -0.1, 0.8, 0.4};
    const auto base = score(fwd, kernel, x, 0.5);
    std::vector<double> poked = x;
    poked[3] += 100.0;  // future unit for queries 0..2
    const auto after = score(fwd, kernel, poked, 0.5);
    for (int i = 0; i < 3; ++i) CHECK(base[i] == after[i]);
    CHECK(base[3] != after[3]);

    Scorer bwd =
        tiny_net ? make_tiny_net_scorer(ScorerRole::GeneratedBackward, scheme,
                                        4, 1, 1, 1, 8, 1, 2, 4, 4)
                 : make_affine_scorer(ScorerRole::GeneratedBackward, scheme, 4,
                                      1, 1, 1);
    if (!tiny_net)
      for (auto& v : bwd.learned->aff_w) v = rng.normal();
    const auto bwd_base = score(bwd, kernel, x, 0.5);
    poked = x;
    poked[0] -= 50.0;  // past unit for queries 1..3
    const auto bwd_after = score(bwd, kernel, poked, 0.5);
    for (int i = 1; i < 4; ++i) CHECK(bwd_base[i] == bwd_after[i]);
    CHECK(bwd_base[0] != bwd_after[0]);
  }
}

TEST_CASE("training: 1-D mean shift converges (reduced run)") {
  TrainConfig cfg;
  cfg.lr = 1e-2;
  cfg.steps = 2000;
  cfg.batch = 32;
  cfg.scorer_ratio = 5;
  cfg.seed = 0;
  cfg.mode = SymmetricMode::ForwardPlusBackward;
  const TrainResult res = train_affine_toy(cfg, 3.0, 1.0);
  CHECK(res.trace.size() == 2000);
  CHECK(std::abs(res.final_mean - 3.0) < 0.1);
  CHECK(std::abs(res.final_std - 1.0) < 0.2);
}

TEST_CASE("training: matched start does not drift") {
  TrainConfig cfg;
  cfg.steps = 500;
  cfg.seed = 3;
  const TrainResult res = train_affine_toy(cfg, 0.0, 1.0);
  CHECK(std::abs(res.final_mean) < 0.05);
}

TEST_CASE("training: the four scorer configurations emit uniform traces") {
  const GenConfig gcfg = sweep_config();
  const AnalyticGaussian target{{0.6}, 1.0};
  std::vector<TrainResult> results;
  for (auto mode : {SymmetricMode::Full, SymmetricMode::ForwardOnly,
                    SymmetricMode::BackwardOnly,
                    SymmetricMode::ForwardPlusBackward}) {
    TrainConfig cfg;
    cfg.lr = 5e-3;
    cfg.steps = 40;
    cfg.batch = 8;
    cfg.scorer_ratio = 5;
    cfg.seed = 42;
    cfg.mode = mode;
    results.push_back(train_unit_toy(cfg, gcfg, 2, 2, 2, target));
  }
  for (const auto& res : results) {
    REQUIRE(res.trace.size() == 40);
    for (size_t i = 0; i < res.trace.size(); ++i) {
      CHECK(res.trace[i].step == i + 1);
      CHECK(std::isfinite(res.trace[i].sample_mean));
      CHECK(std::isfinite(res.trace[i].bracket_norm));
    }
    CHECK(std::isfinite(res.final_mean));
  }
  // identical schema: the csv header and column count line up across modes
  std::vector<std::string> headers;
  for (const auto& res : results) {
    std::ostringstream out;
    write_trace_csv(res.trace, out);
    headers.push_back(out.str().substr(0, out.str().find('\n')));
  }
  for (const auto& h : headers) CHECK(h == headers.front());
  // mode-specific loss columns: full only fills loss_full, etc.
  CHECK(std::isfinite(results[0].trace[0].loss_full));
  CHECK(std::isnan(results[0].trace[0].loss_fwd));
  CHECK(std::isfinite(results[1].trace[0].loss_fwd));
  CHECK(std::isfinite(results[3].trace[0].loss_fwd));
  CHECK(std::isfinite(results[3].trace[0].loss_bwd));
}

TEST_CASE("trace writers: csv and jsonl") {
  std::vector<TraceRow> rows(2);
  rows[0].step = 1;
  rows[0].sample_mean = 0.5;
  rows[0].bracket_norm = 1.25;
  rows[1].step = 2;
  std::ostringstream csv;
  write_trace_csv(rows, csv);
  CHECK(csv.str().find("step,sample_mean,bracket_norm,loss_full,loss_fwd,"
                       "loss_bwd\n") == 0);
  CHECK(csv.str().find("1,0.5,1.25,nan,nan,nan") != std::string::npos);
  std::ostringstream jsonl;
  write_trace_jsonl(rows, jsonl);
  CHECK(jsonl.str().find("\"loss_full\":null") != std::string::npos);
  CHECK(jsonl.str().find("\"step\":2") != std::string::npos);
}

TEST_SUITE_END();
