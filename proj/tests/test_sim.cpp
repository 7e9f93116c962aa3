#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "lbmpc/error.hpp"
#include "lbmpc/sim.hpp"

using namespace lbmpc;
using Eigen::VectorXd;

namespace {

// Step response of 160/((s+10)(s²+1.6s+16)) by partial fractions:
// y(t) = 1 + r e^{−10t} + e^{−0.8t}(c cos ωt + s sin ωt), ω² = 16 − 0.64.
double step_response(double t) {
  const double w = std::sqrt(16.0 - 0.64);
  // Residue at s = −10 of G(s)/s: 160 / ((−10)(100 − 16 + 16)).
  const double r = 160.0 / (-10.0 * (100.0 - 16.0 + 16.0));
  // y(0) = 0 and y'(0) = 0 fix the oscillatory coefficients.
  const double c = -1.0 - r;
  const double s = (10.0 * r + 0.8 * c) / w;
  return 1.0 + r * std::exp(-10.0 * t) + std::exp(-0.8 * t) * (c * std::cos(w * t) + s * std::sin(w * t));
}

}  // namespace

TEST_CASE("plant: unit gain and stable poles") {
  const auto plant = discretize_plant(0.1);
  CHECK(plant.n == 3);
  CHECK(std::abs(plant.dc_gain() - 1.0) <= 1e-9);
  CHECK(plant.pole_radius() < 1.0);
}

TEST_CASE("plant: samples of the continuous step response") {
  CHECK(std::abs(step_response(0.0)) < 1e-14);
  const auto plant = discretize_plant(0.1);
  const auto tr = simulate_openloop(plant, std::vector<double>(200, 1.0), {}, {});
  for (size_t k = 0; k < tr.z.size(); ++k) CHECK(std::abs(tr.z[k] - step_response(0.1 * k)) <= 1e-9);
  // Lightly damped: visible overshoot, settles at one.
  const double peak = *std::max_element(tr.z.begin(), tr.z.end());
  CHECK(peak > 1.3);
  CHECK(std::abs(tr.z.back() - 1.0) < 1e-3);
}

TEST_CASE("plant: poles approach one as the period shrinks") {
  double prev = 0.0;
  for (double ts : {0.1, 0.01, 0.001}) {
    const double r = discretize_plant(ts).pole_radius();
    CHECK(r > prev);
    prev = r;
  }
  CHECK(prev > 0.999);
}

TEST_CASE("plant: invalid inputs") {
  CHECK_THROWS_AS(discretize_plant(0.0), Error);
  CHECK_THROWS_AS(discretize_plant(ContinuousTF{{1.0, 2.0}, {1.0, 1.0}}, 0.1), Error);
}

TEST_CASE("excitation: segments, determinism and level frequencies") {
  const auto u = excitation_input(1000, 50, {-1, 0, 1}, 5);
  CHECK(u.size() == 1000);
  for (size_t k = 0; k < u.size(); ++k)
    if (k % 50) CHECK(u[k] == u[k - 1]);
  CHECK(u == excitation_input(1000, 50, {-1, 0, 1}, 5));
  CHECK(u != excitation_input(1000, 50, {-1, 0, 1}, 6));

  const int segments = 10000;
  const auto long_u = excitation_input(segments, 1, {-1, 0, 1}, 9);
  double counts[3] = {0, 0, 0};
  for (double v : long_u) counts[static_cast<int>(v) + 1] += 1;
  double chi2 = 0.0;
  for (double c : counts) chi2 += (c - segments / 3.0) * (c - segments / 3.0) / (segments / 3.0);
  CHECK(chi2 < 9.21);  // 1% critical value, two degrees of freedom
}

TEST_CASE("open loop: rest and noise bounds") {
  const auto plant = discretize_plant(0.1);
  const auto rest = simulate_openloop(plant, std::vector<double>(100, 0.0), {}, {});
  CHECK(std::all_of(rest.z.begin(), rest.z.end(), [](double z) { return z == 0.0; }));

  const auto u = excitation_input(1000, 50, {-1, 0, 1}, 3);
  const auto tr = simulate_openloop(plant, u, 3);
  double dmax = 0.0;
  for (size_t k = 0; k < tr.size(); ++k) dmax = std::max(dmax, std::abs(tr.y[k] - tr.z[k]));
  CHECK(dmax <= plant.d_bar);
  CHECK(dmax > 0.9 * plant.d_bar);
  const auto again = simulate_openloop(plant, u, 3);
  CHECK(again.y == tr.y);
  CHECK(again.z == tr.z);
}

TEST_CASE("open loop: bounded input gives bounded output") {
  const auto plant = discretize_plant(0.1);
  const auto step = simulate_openloop(plant, std::vector<double>(300, 1.0), {}, {});
  // Peak-to-peak amplification is bounded by the ℓ1 norm of the impulse response.
  double l1 = 0.0, prev = 0.0;
  for (double z : step.z) {
    l1 += std::abs(z - prev);
    prev = z;
  }
  const auto u = excitation_input(2000, 7, {-1, 0, 1}, 4);
  const auto tr = simulate_openloop(plant, u, {}, {});
  for (double z : tr.z) CHECK(std::abs(z) <= l1 + 1e-9);
}

TEST_CASE("plant simulator matches the regression") {
  const auto plant = discretize_plant(0.1);
  PlantSimulator sim(plant);
  sim.step(1.0, 0.0);
  sim.step(-0.5, 0.0);
  const VectorXd phi = sim.regressor(0.25);
  CHECK(phi.size() == 6);
  CHECK(phi[3] == -0.5);
  CHECK(phi[4] == 1.0);
  CHECK(phi[5] == 0.25);
  const double expect = plant.theta.dot(phi) + 0.003;
  sim.step(0.25, 0.003);
  CHECK(sim.z() == expect);
}
