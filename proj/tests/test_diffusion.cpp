#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "combo/diffusion.hpp"

using namespace combo::diffusion;
using combo::nn::Tensor;

namespace {

// Empirical per-dimension mean/variance of sampled rows.
void sample_stats(const Tensor& x, std::vector<double>& mean, std::vector<double>& var) {
  int n = x.rows(), d = x.cols();
  mean.assign(d, 0.0);
  var.assign(d, 0.0);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < d; ++c) mean[c] += x.at(r, c);
  for (double& m : mean) m /= n;
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < d; ++c) {
      double dd = x.at(r, c) - mean[c];
      var[c] += dd * dd;
    }
  for (double& v : var) v /= (n - 1);
}

EpsProvider analytic_provider(GaussianFactor prior, std::vector<GaussianFactor> factors,
                              const NoiseSchedule& sched, double omega) {
  return [prior, factors, &sched, omega](const Tensor& x_t, int t) {
    Tensor uncond = analytic_gaussian_eps(prior, sched, x_t, t);
    std::vector<Tensor> conds;
    for (const auto& f : factors) conds.push_back(analytic_gaussian_eps(f, sched, x_t, t));
    return compose_noise(uncond, conds, omega);
  };
}

}  // namespace

TEST_CASE("linear schedule basics") {
  NoiseSchedule one = linear_schedule(1, 0.01, 0.02);
  CHECK(one.T == 1);
  CHECK(one.beta(1) == doctest::Approx(0.01));

  NoiseSchedule s = linear_schedule(100, 1e-4, 0.02);
  for (int t = 2; t <= 100; ++t) {
    CHECK(s.beta(t) >= s.beta(t - 1));
    CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
    CHECK(std::isfinite(s.sigma(t)));
  }
  CHECK(s.alpha_bar(100) > 0.0);
  CHECK(s.alpha_bar(100) < s.alpha_bar(1));

  // Independent cumulative product at extended precision.
  long double ab = 1.0L;
  for (int i = 0; i < 100; ++i) {
    long double beta = 1e-4L + (0.02L - 1e-4L) * i / 99.0L;
    ab *= (1.0L - beta);
  }
  CHECK(s.alpha_bar(100) == doctest::Approx(static_cast<double>(ab)).epsilon(1e-12));

  CHECK_THROWS_AS(linear_schedule(10, 0.0, 0.02), std::invalid_argument);
  CHECK_THROWS_AS(linear_schedule(10, 0.03, 0.02), std::invalid_argument);
  CHECK_THROWS_AS(linear_schedule(10, 0.01, 1.0), std::invalid_argument);
}

TEST_CASE("forward noise is the stated affine combination") {
  NoiseSchedule s = linear_schedule(100, 1e-4, 0.02);
  Tensor x0(1, 3);
  x0.v = {1.0, -0.5, 2.0};
  Tensor zero(1, 3);
  Tensor noised = forward_noise(x0, 40, zero, s);
  double a = std::sqrt(s.alpha_bar(40));
  for (int c = 0; c < 3; ++c) CHECK(noised.at(0, c) == doctest::Approx(a * x0.at(0, c)));

  // t=1 with a tiny beta keeps the sample close to x0.
  NoiseSchedule gentle = linear_schedule(100, 1e-6, 1e-5);
  Tensor eps(1, 3);
  eps.v = {0.3, 0.3, 0.3};
  Tensor near = forward_noise(x0, 1, eps, gentle);
  for (int c = 0; c < 3; ++c) CHECK(near.at(0, c) == doctest::Approx(x0.at(0, c)).epsilon(1e-2));

  // Hand-computed affine combination.
  Tensor mixed = forward_noise(x0, 40, eps, s);
  double b = std::sqrt(1.0 - s.alpha_bar(40));
  CHECK(mixed.at(0, 1) == doctest::Approx(a * -0.5 + b * 0.3).epsilon(1e-12));

  CHECK_THROWS_AS(forward_noise(x0, 0, eps, s), std::invalid_argument);
  CHECK_THROWS_AS(forward_noise(x0, 101, eps, s), std::invalid_argument);
}

TEST_CASE("compose_noise identities") {
  Tensor u(2, 3), c1(2, 3), c2(2, 3);
  std::mt19937_64 rng(5);
  combo::nn::fill_gaussian(u, rng);
  combo::nn::fill_gaussian(c1, rng);

  // n=1, omega=1 returns the conditional prediction bit-exactly.
  Tensor out = compose_noise(u, {c1}, 1.0);
  CHECK(out.v == c1.v);

  // All conditions equal to the unconditional -> unconditional, any omega.
  Tensor same = compose_noise(u, {u, u, u}, 7.5);
  for (size_t i = 0; i < u.v.size(); ++i) CHECK(same.v[i] == doctest::Approx(u.v[i]));

  // eps_uncond = 0, conditions +1 and -1, omega=5 -> exactly 0.
  Tensor zero(1, 4), plus(1, 4), minus(1, 4);
  plus.fill(1.0);
  minus.fill(-1.0);
  Tensor cancel = compose_noise(zero, {plus, minus}, 5.0);
  for (double v : cancel.v) CHECK(v == doctest::Approx(0.0));

  CHECK_THROWS_AS(compose_noise(u, {}, 1.0), std::invalid_argument);
}

TEST_CASE("product of gaussians closed form") {
  GaussianFactor f1{{1.0}, {1.0}};
  GaussianFactor f2{{-1.0}, {1.0}};
  GaussianFactor prior{{0.0}, {4.0}};

  // Single factor with itself as prior -> identity.
  auto same = product_of_gaussians(f1, {f1});
  CHECK(same.mean[0] == doctest::Approx(1.0));
  CHECK(same.var[0] == doctest::Approx(1.0));

  // Two identical factors under a flat prior -> variance halves.
  GaussianFactor flat{{0.0}, {1e12}};
  auto half = product_of_gaussians(flat, {f1, f1});
  CHECK(half.mean[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(half.var[0] == doctest::Approx(0.5).epsilon(1e-6));

  // Hand computation: precision 1/4 + (1 - 1/4) + (1 - 1/4) = 7/4,
  // mean numerator 0 + 1 - 1 = 0.
  auto res = product_of_gaussians(prior, {f1, f2});
  CHECK(res.mean[0] == doctest::Approx(0.0));
  CHECK(res.var[0] == doctest::Approx(4.0 / 7.0));

  // Ill-posed composition: factor precision far below the prior's.
  GaussianFactor wide{{0.0}, {100.0}};
  GaussianFactor narrow_prior{{0.0}, {0.01}};
  CHECK_THROWS_AS(product_of_gaussians(narrow_prior, {wide, wide}), std::runtime_error);
}

TEST_CASE("ddpm sampling from a single analytic factor matches it") {
  NoiseSchedule sched = linear_schedule(200, 1e-4, 0.05);
  GaussianFactor target{{0.7, -0.4}, {0.36, 0.81}};
  std::mt19937_64 rng(17);
  SampleConfig cfg;
  cfg.kind = SamplerKind::ddpm;
  auto eps = analytic_provider(target, {target}, sched, 1.0);
  Tensor samples = reverse_sample(eps, sched, 6000, 2, cfg, rng);
  std::vector<double> mean, var;
  sample_stats(samples, mean, var);
  for (int d = 0; d < 2; ++d) {
    CHECK(std::abs(mean[d] - target.mean[d]) < 0.05);
    CHECK(var[d] == doctest::Approx(target.var[d]).epsilon(0.12));
  }
}

TEST_CASE("ddim with zero stochasticity is reproducible under a fixed seed") {
  NoiseSchedule sched = linear_schedule(100, 1e-4, 0.2);
  GaussianFactor target{{0.3}, {0.5}};
  SampleConfig cfg;
  cfg.kind = SamplerKind::ddim;
  cfg.ddim_steps = 100;
  auto eps = analytic_provider(target, {target}, sched, 1.0);
  std::mt19937_64 r1(9), r2(9);
  Tensor a = reverse_sample(eps, sched, 8, 1, cfg, r1);
  Tensor b = reverse_sample(eps, sched, 8, 1, cfg, r2);
  CHECK(a.v == b.v);
}

TEST_CASE("two composed factors sample the analytic product gaussian") {
  // Matched factor variances keep the per-step score composition exact, so
  // the empirical check isolates the product rule itself.
  NoiseSchedule sched = linear_schedule(200, 1e-4, 0.05);
  GaussianFactor prior{{0.0, 0.0}, {1.0, 1.0}};
  GaussianFactor f1{{0.8, 0.2}, {1.0, 1.0}};
  GaussianFactor f2{{-0.4, 0.5}, {1.0, 1.0}};
  auto expected = product_of_gaussians(prior, {f1, f2});
  CHECK(expected.mean[0] == doctest::Approx(0.4));
  CHECK(expected.mean[1] == doctest::Approx(0.7));
  SampleConfig cfg;
  cfg.kind = SamplerKind::ddpm;
  std::mt19937_64 rng(23);
  auto eps = analytic_provider(prior, {f1, f2}, sched, 1.0);
  Tensor samples = reverse_sample(eps, sched, 8000, 2, cfg, rng);
  std::vector<double> mean, var;
  sample_stats(samples, mean, var);
  for (int d = 0; d < 2; ++d) {
    CHECK(std::abs(mean[d] - expected.mean[d]) < 0.05);
    CHECK(var[d] == doctest::Approx(expected.var[d]).epsilon(0.10));
  }
}

TEST_CASE("weighted mse identities") {
  Tensor pred(2, 6), eps(2, 6);
  std::mt19937_64 rng(3);
  combo::nn::fill_gaussian(pred, rng);
  combo::nn::fill_gaussian(eps, rng);

  // pred == eps -> exactly zero.
  std::vector<double> w_all(2 * 3, 1.0);  // 3 cells x 2 channels
  CHECK(weighted_mse(pred, pred, w_all, 2, nullptr) == 0.0);

  // Uniform weights reduce to the plain mean squared error.
  double plain = 0.0;
  for (size_t i = 0; i < pred.v.size(); ++i) {
    double d = pred.v[i] - eps.v[i];
    plain += d * d;
  }
  plain /= pred.v.size();
  CHECK(weighted_mse(pred, eps, w_all, 2, nullptr) == doctest::Approx(plain).epsilon(1e-12));

  // Doubling one cell adds exactly that cell's unweighted contribution.
  std::vector<double> w_double = w_all;
  w_double[1] = 2.0;  // row 0, cell 1 (dims 2..3 of row 0)
  double extra = 0.0;
  for (int d = 2; d < 4; ++d) {
    double diff = pred.at(0, d) - eps.at(0, d);
    extra += diff * diff;
  }
  extra /= pred.v.size();
  CHECK(weighted_mse(pred, eps, w_double, 2, nullptr) ==
        doctest::Approx(plain + extra).epsilon(1e-12));
}

TEST_CASE("composed loss equals the naive mean-of-branches recomputation") {
  DenoiserConfig cfg;
  cfg.state_dim = 8;
  cfg.x0_dim = 8;
  cfg.action_dim = 5;
  cfg.temb_dim = 8;
  cfg.hidden = 12;
  cfg.cond_embed = 10;
  cfg.T = 20;
  DenoiserModel model(cfg, 77);
  NoiseSchedule sched = linear_schedule(20, 1e-3, 0.1);

  ComposedBatch batch;
  std::mt19937_64 rng(4);
  batch.target = Tensor(3, 8);
  batch.cond_state = Tensor(3, 8);
  combo::nn::fill_gaussian(batch.target, rng);
  combo::nn::fill_gaussian(batch.cond_state, rng);
  for (int i = 0; i < 3; ++i) {
    Tensor a(3, 5);
    combo::nn::fill_gaussian(a, rng);
    batch.cond_actions.push_back(a);
  }

  combo::nn::Workspace ws;
  model.net().init_grads(ws);
  LossDebug dbg;
  std::mt19937_64 loss_rng(11);
  double loss = loss_composed(model, batch, sched, loss_rng, ws, &dbg);

  REQUIRE(dbg.branch_preds.size() == 3);
  double naive = 0.0;
  for (int r = 0; r < 3; ++r)
    for (int d = 0; d < 8; ++d) {
      double mean = 0.0;
      for (int i = 0; i < 3; ++i) mean += dbg.branch_preds[i].at(r, d) / 3.0;
      double diff = mean - dbg.eps.at(r, d);
      naive += diff * diff;
    }
  naive /= 24.0;
  CHECK(loss == doctest::Approx(naive).epsilon(1e-14));

  // Branches at eps+delta and eps-delta cancel: mean == eps -> loss 0.
  Tensor delta(1, 4);
  delta.v = {0.3, -0.2, 0.9, 0.1};
  Tensor epsv(1, 4);
  epsv.v = {1.0, 2.0, -1.0, 0.5};
  Tensor up = epsv, down = epsv;
  for (int d = 0; d < 4; ++d) {
    up.at(0, d) += delta.at(0, d);
    down.at(0, d) -= delta.at(0, d);
  }
  double cancel = 0.0;
  for (int d = 0; d < 4; ++d) {
    double mean = 0.5 * (up.at(0, d) + down.at(0, d));
    cancel += (mean - epsv.at(0, d)) * (mean - epsv.at(0, d));
  }
  CHECK(cancel == 0.0);

  // Fewer than two agent conditions is a stage-two precondition violation.
  ComposedBatch degenerate = batch;
  degenerate.cond_actions.resize(1);
  combo::nn::Workspace ws2;
  std::mt19937_64 r2(1);
  CHECK_THROWS_AS(loss_composed(model, degenerate, sched, r2, ws2), std::invalid_argument);
}

TEST_CASE("both diffusion losses pass grad_check at 1e-4") {
  DenoiserConfig cfg;
  cfg.state_dim = 6;
  cfg.x0_dim = 6;
  cfg.action_dim = 4;
  cfg.temb_dim = 8;
  cfg.hidden = 10;
  cfg.cond_embed = 8;
  cfg.T = 15;
  NoiseSchedule sched = linear_schedule(15, 1e-3, 0.1);

  SingleBatch sb;
  std::mt19937_64 rng(6);
  sb.target = Tensor(3, 6);
  sb.cond_state = Tensor(3, 6);
  sb.cond_action = Tensor(3, 4);
  combo::nn::fill_gaussian(sb.target, rng);
  combo::nn::fill_gaussian(sb.cond_state, rng);
  combo::nn::fill_gaussian(sb.cond_action, rng);
  sb.agent = {0, 1, 0};
  LossScaleMatrix C = LossScaleMatrix::uniform(2, 3, 1.0);
  for (int c = 0; c < 3; ++c) C.w[c] = 2.0;  // agent 0 row emphasised

  DenoiserModel single_model(cfg, 101);
  auto single_loss = [&](combo::nn::Network&, std::vector<combo::nn::Tensor>* grads) {
    combo::nn::Workspace ws;
    single_model.net().init_grads(ws);
    std::mt19937_64 fixed(42);
    double loss = loss_single(single_model, sb, C, sched, 0.3, fixed, ws);
    if (grads) *grads = ws.grads;
    return loss;
  };
  auto report = grad_check(single_model.net(), single_loss, 1e-4);
  INFO("single loss max rel err ", report.max_rel_error);
  CHECK(report.pass);

  ComposedBatch cb;
  cb.target = sb.target;
  cb.cond_state = sb.cond_state;
  for (int i = 0; i < 2; ++i) {
    Tensor a(3, 4);
    combo::nn::fill_gaussian(a, rng);
    cb.cond_actions.push_back(a);
  }
  DenoiserModel composed_model(cfg, 102);
  auto composed_loss = [&](combo::nn::Network&, std::vector<combo::nn::Tensor>* grads) {
    combo::nn::Workspace ws;
    composed_model.net().init_grads(ws);
    std::mt19937_64 fixed(43);
    double loss = loss_composed(composed_model, cb, sched, fixed, ws);
    if (grads) *grads = ws.grads;
    return loss;
  };
  auto report2 = grad_check(composed_model.net(), composed_loss, 1e-4);
  INFO("composed loss max rel err ", report2.max_rel_error);
  CHECK(report2.pass);
}

TEST_CASE("denoiser save/load round-trips config and parameters") {
  DenoiserConfig cfg;
  cfg.state_dim = 6;
  cfg.x0_dim = 6;
  cfg.action_dim = 4;
  cfg.temb_dim = 8;
  cfg.hidden = 10;
  cfg.cond_embed = 8;
  DenoiserModel model(cfg, 55);
  std::string path = "/tmp/denoiser_test.cdn";
  model.save(path);
  DenoiserModel loaded = DenoiserModel::load(path);
  CHECK(loaded.config().state_dim == 6);
  CHECK(loaded.config().action_dim == 4);

  Tensor x(2, 6), x0(2, 6), act(2, 4);
  std::mt19937_64 rng(8);
  combo::nn::fill_gaussian(x, rng);
  combo::nn::fill_gaussian(x0, rng);
  combo::nn::fill_gaussian(act, rng);
  combo::nn::Workspace wa, wb;
  Tensor ya = model.predict(x, {3, 7}, x0, act, wa);
  Tensor yb = loaded.predict(x, {3, 7}, x0, act, wb);
  CHECK(ya.v == yb.v);
  std::remove(path.c_str());
}
