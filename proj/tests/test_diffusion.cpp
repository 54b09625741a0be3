#include <doctest.h>

#include <cmath>

#include "cdk/diffusion.hpp"
#include "oracles.hpp"

using namespace cdk;

TEST_CASE("schedule is variance preserving with the right endpoints") {
  NoiseSchedule s = NoiseSchedule::cosine();
  CHECK(s.alpha(0.0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s.sigma(0.0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(s.alpha(1.0) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(s.sigma(1.0) == doctest::Approx(1.0).epsilon(1e-12));

  double prev_a = 2.0, prev_s = -1.0;
  for (int i = 0; i <= 1000; ++i) {
    double t = static_cast<double>(i) / 1000.0;
    double a = s.alpha(t), sg = s.sigma(t);
    CHECK(std::abs(a * a + sg * sg - 1.0) < 1e-9);
    CHECK(a <= prev_a + 1e-12);
    CHECK(sg >= prev_s - 1e-12);
    prev_a = a;
    prev_s = sg;
  }
}

TEST_CASE("forward diffusion endpoints and midpoint") {
  NoiseSchedule s = NoiseSchedule::cosine();
  Rng rng(1);
  Tensor z0 = Tensor::randn({2, 3, 4, 4}, rng);
  Tensor eps = Tensor::randn({2, 3, 4, 4}, rng);

  CHECK(max_abs_diff(forward_diffuse(z0, eps, 0.0, s), z0) == 0.0);
  CHECK(max_abs_diff(forward_diffuse(z0, eps, 1.0, s), eps) == 0.0);

  // at t = 0.5 the cosine schedule has alpha = sigma = sqrt(1/2), so
  // ones + ones diffuse to sqrt(2) everywhere
  CHECK(s.alpha(0.5) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-12));
  Tensor ones = Tensor::ones({8});
  Tensor mid = forward_diffuse(ones, ones, 0.5, s);
  for (int64_t i = 0; i < mid.size(); ++i)
    CHECK(mid[i] == doctest::Approx(std::sqrt(2.0)).epsilon(1e-6));

  CHECK_THROWS_AS(forward_diffuse(z0, Tensor({3}), 0.5, s), ContractError);
  CHECK_THROWS_AS(forward_diffuse(z0, eps, 1.5, s), ContractError);
  CHECK_THROWS_AS(forward_diffuse(z0, eps, -0.1, s), ContractError);
}

TEST_CASE("v target endpoints and reconstruction identities") {
  NoiseSchedule s = NoiseSchedule::cosine();
  Rng rng(2);
  Tensor z0 = Tensor::randn({3, 5}, rng);
  Tensor eps = Tensor::randn({3, 5}, rng);

  CHECK(max_abs_diff(v_target(z0, eps, 0.0, s), eps) == 0.0);
  Tensor neg_z0 = z0;
  for (int64_t i = 0; i < neg_z0.size(); ++i) neg_z0[i] = -neg_z0[i];
  CHECK(max_abs_diff(v_target(z0, eps, 1.0, s), neg_z0) == 0.0);

  // alpha z_t - sigma v = z0 and sigma z_t + alpha v = eps, 100 random t
  for (int i = 0; i < 100; ++i) {
    double t = rng.uniform();
    float a = static_cast<float>(s.alpha(t)), sg = static_cast<float>(s.sigma(t));
    Tensor zt = forward_diffuse(z0, eps, t, s);
    Tensor v = v_target(z0, eps, t, s);
    for (int64_t k = 0; k < z0.size(); ++k) {
      CHECK(std::abs(a * zt[k] - sg * v[k] - z0[k]) < 1e-6);
      CHECK(std::abs(sg * zt[k] + a * v[k] - eps[k]) < 1e-6);
    }
  }
}

TEST_CASE("diffusion loss: exact oracle gives zero; zero predictor matches E[alpha^2]") {
  NoiseSchedule s = NoiseSchedule::cosine();

  SUBCASE("exact v oracle gives zero loss") {
    Rng rng(3);
    Tensor z0 = Tensor::randn({2, 4}, rng);
    // share the drawn (t, eps) by replaying a copy of the generator
    Rng replay = rng;
    Denoiser oracle = [&](const Tensor& zt, double t, const Tensor&) {
      double tt = replay.uniform();
      Tensor eps = Tensor::randn(z0.shape(), replay);
      CHECK(tt == t);
      return v_target(z0, eps, tt, s);
    };
    double loss = diffusion_loss<float>(oracle, {z0}, {}, s, rng);
    CHECK(loss == 0.0);
  }

  SUBCASE("zero predictor on z0=0 concentrates at E[alpha_t^2] = 1/2") {
    // Monte-Carlo oracle: per draw the loss is alpha_t^2 * mean(eps^2);
    // over t ~ U(0,1) the expectation is 1/2 for the cosine schedule.
    Rng rng(4);
    Denoiser zero = [](const Tensor& zt, double, const Tensor&) { return Tensor(zt.shape()); };
    const int n = 10000;
    double sum = 0.0, sum2 = 0.0;
    Tensor z0({16});
    for (int i = 0; i < n; ++i) {
      double l = diffusion_loss<float>(zero, {z0}, {}, s, rng);
      sum += l;
      sum2 += l * l;
    }
    double mean = sum / n;
    double se = std::sqrt((sum2 / n - mean * mean) / n);
    CHECK(std::abs(mean - 0.5) < 3.0 * se);
  }

  SUBCASE("loss is invariant to batch order") {
    Rng rng(5);
    Tensor a = Tensor::randn({8}, rng), b = Tensor::randn({8}, rng);
    Denoiser zero = [](const Tensor& zt, double, const Tensor&) { return Tensor(zt.shape()); };
    double l1 = diffusion_loss<float>(zero, {a, b}, {}, s, Rng(7));
    // swapped batch with swapped per-sample draws gives the same mean: check
    // via symmetry of the mean over a fixed set of per-sample values
    Rng r1(7);
    double la, lb;
    {
      Rng rr = r1;
      la = diffusion_loss<float>(zero, {a}, {}, s, rr);
    }
    {
      Rng rr = r1;
      double t0 = rr.uniform();
      (void)t0;
      Tensor e0 = Tensor::randn({8}, rr);
      (void)e0;
      lb = diffusion_loss<float>(zero, {b}, {}, s, rr);
    }
    CHECK(l1 == doctest::Approx(0.5 * (la + lb)).epsilon(1e-12));
  }

  SUBCASE("non-finite prediction raises with the batch index") {
    Rng rng(6);
    Tensor z0 = Tensor::randn({4}, rng);
    Denoiser bad = [](const Tensor& zt, double, const Tensor&) {
      Tensor out(zt.shape());
      out[0] = std::numeric_limits<float>::infinity();
      return out;
    };
    try {
      diffusion_loss<float>(bad, {z0, z0}, {}, s, rng);
      CHECK(false);
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("batch index 0") != std::string::npos);
    }
  }
}

TEST_CASE("euler sampler inverts a one-step exact prediction") {
  NoiseSchedule s = NoiseSchedule::cosine();
  Rng rng(8);
  Tensor z0 = Tensor::randn({2, 3, 2, 2}, rng);
  Tensor zT = Tensor::randn(z0.shape(), rng);

  // exact v for a known clean latent: v = (alpha z - z0) / sigma
  Denoiser exact = [&](const Tensor& z, double t, const Tensor&) {
    float a = static_cast<float>(s.alpha(t)), sg = static_cast<float>(s.sigma(t));
    Tensor v(z.shape());
    for (int64_t i = 0; i < z.size(); ++i) v[i] = (a * z[i] - z0[i]) / sg;
    return v;
  };

  Tensor rec = sample(exact, zT, Tensor{}, 1, s);
  CHECK(max_abs_diff(rec, z0) < 1e-5);

  // determinism: identical inputs give bitwise identical outputs
  Tensor rec2 = sample(exact, zT, Tensor{}, 1, s);
  CHECK(max_abs_diff(rec, rec2) == 0.0);

  CHECK_THROWS_AS(sample(exact, zT, Tensor{}, 0, s), ContractError);
}
