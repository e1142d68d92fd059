#include <doctest.h>

#include <cmath>

#include "kp/nn/optim.hpp"

using namespace kp::nn;

namespace {

// One scalar parameter on f(theta) = a/2 (theta - c)^2.
template <typename Opt>
std::vector<double> run_quadratic(Opt& opt, double theta, double a, double c, int steps) {
  std::vector<double> traj;
  for (int s = 0; s < steps; ++s) {
    double g = a * (theta - c);
    std::vector<ParamSlot> slots{{std::span<double>(&theta, 1), std::span<const double>(&g, 1)}};
    opt.step(slots);
    traj.push_back(theta);
  }
  return traj;
}

}  // namespace

TEST_CASE("plain SGD step") {
  SgdMomentum opt(0.1, 0.0, 0.0);
  auto t = run_quadratic(opt, 1.0, 2.0, 0.0, 1);
  CHECK(t[0] == doctest::Approx(1.0 - 0.1 * 2.0));
}

TEST_CASE("momentum with constant gradient") {
  SgdMomentum opt(0.1, 0.9, 0.0);
  double theta = 5.0, g = 2.0;
  for (int s = 0; s < 2; ++s) {
    std::vector<ParamSlot> slots{{std::span<double>(&theta, 1), std::span<const double>(&g, 1)}};
    opt.step(slots);
  }
  CHECK(theta == doctest::Approx(5.0 - 0.1 * 2.0 * (1.0 + 1.9)).epsilon(1e-14));
}

TEST_CASE("weight decay on a zero gradient") {
  SgdMomentum opt(0.1, 0.0, 0.01);
  double theta = 3.0, g = 0.0;
  std::vector<ParamSlot> slots{{std::span<double>(&theta, 1), std::span<const double>(&g, 1)}};
  opt.step(slots);
  CHECK(theta == doctest::Approx(3.0 * (1.0 - 0.1 * 0.01)).epsilon(1e-14));
}

TEST_CASE("SGD momentum on a quadratic, two steps by hand") {
  // a=2, c=1, theta0=3, lr=0.1, mu=0.9
  // g0 = 4, v1 = 4, theta1 = 2.6
  // g1 = 3.2, v2 = 0.9*4 + 3.2 = 6.8, theta2 = 2.6 - 0.68 = 1.92
  SgdMomentum opt(0.1, 0.9, 0.0);
  auto t = run_quadratic(opt, 3.0, 2.0, 1.0, 2);
  CHECK(std::abs(t[0] - 2.6) < 1e-12);
  CHECK(std::abs(t[1] - 1.92) < 1e-12);
}

TEST_CASE("Adam first step is lr times the gradient sign") {
  Adam opt(0.01, 0.5, 0.999);
  double theta = 1.0, g = 250.0;
  std::vector<ParamSlot> slots{{std::span<double>(&theta, 1), std::span<const double>(&g, 1)}};
  opt.step(slots);
  CHECK(theta == doctest::Approx(1.0 - 0.01 * 250.0 / (250.0 + 1e-8)).epsilon(1e-14));
  CHECK(opt.step_count() == 1);

  Adam idle(0.01, 0.5, 0.999);
  double p = 2.0, zero = 0.0;
  std::vector<ParamSlot> s2{{std::span<double>(&p, 1), std::span<const double>(&zero, 1)}};
  idle.step(s2);
  CHECK(p == 2.0);
}

TEST_CASE("Adam two steps on a quadratic by hand") {
  // a=1, c=0, theta0=1, lr=0.1, b1=0.5, b2=0.999, eps=0
  // step 1: g=1, m=0.5, v=0.001, mhat=1, vhat=1 -> theta=0.9
  // step 2: g=0.9, m=0.7, v=0.000999+0.00081=0.001809
  //         mhat=0.7/0.75, vhat=0.001809/(1-0.998001)
  Adam opt(0.1, 0.5, 0.999, 0.0);
  auto t = run_quadratic(opt, 1.0, 1.0, 0.0, 2);
  CHECK(std::abs(t[0] - 0.9) < 1e-12);
  const double mhat = 0.7 / 0.75, vhat = 0.001809 / (1.0 - 0.998001);
  CHECK(std::abs(t[1] - (0.9 - 0.1 * mhat / std::sqrt(vhat))) < 1e-10);
}

TEST_CASE("updates are coordinate-wise") {
  std::vector<double> theta{1.0, -2.0, 0.5}, g{0.3, -1.0, 2.0};
  std::vector<double> perm_theta{0.5, 1.0, -2.0}, perm_g{2.0, 0.3, -1.0};
  for (int which = 0; which < 2; ++which) {
    auto a = theta, b = perm_theta;
    std::vector<ParamSlot> sa{{a, g}}, sb{{b, perm_g}};
    if (which == 0) {
      SgdMomentum o1(0.1, 0.9, 0.01), o2(0.1, 0.9, 0.01);
      o1.step(sa);
      o1.step(sa);
      o2.step(sb);
      o2.step(sb);
    } else {
      Adam o1(0.1, 0.5, 0.999), o2(0.1, 0.5, 0.999);
      o1.step(sa);
      o1.step(sa);
      o2.step(sb);
      o2.step(sb);
    }
    CHECK(a[0] == b[1]);
    CHECK(a[1] == b[2]);
    CHECK(a[2] == b[0]);
  }
}

TEST_CASE("velocity survives restore") {
  SgdMomentum a(0.1, 0.9, 0.0);
  double t1 = 1.0, g = 1.0;
  std::vector<ParamSlot> s{{std::span<double>(&t1, 1), std::span<const double>(&g, 1)}};
  a.step(s);
  SgdMomentum b(0.1, 0.9, 0.0);
  b.restore(a.velocity());
  double t2 = t1;
  std::vector<ParamSlot> s2{{std::span<double>(&t2, 1), std::span<const double>(&g, 1)}};
  a.step(s);
  b.step(s2);
  CHECK(t1 == t2);
}
