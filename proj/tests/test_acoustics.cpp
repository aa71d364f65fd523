#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "uasn/acoustics.hpp"
#include "uasn/rng.hpp"

using namespace uasn::acoustics;

// Reference values below were evaluated independently at 30 significant
// digits and are frozen here.

TEST(VehicleNoise, ReferencePoints) {
  EXPECT_DOUBLE_EQ(vehicle_noise(1.0, 6.18, 1.0), 186.0);
  EXPECT_NEAR(vehicle_noise(10.0, 6.18, 1.0), 166.0, 1e-12);
  EXPECT_NEAR(vehicle_noise(100.0, 12.36, 2.0), 150.816479930623699, 1e-9);
}

TEST(VehicleNoise, RejectsNonPositive) {
  EXPECT_THROW(vehicle_noise(0.0, 6.18, 1.0), std::domain_error);
  EXPECT_THROW(vehicle_noise(1.0, -1.0, 1.0), std::domain_error);
  EXPECT_THROW(vehicle_noise(1.0, 6.18, 0.0), std::domain_error);
}

TEST(ThermalNoise, ReferencePoints) {
  const double base = thermal_noise(290.0, 1.0, 1.0);
  EXPECT_NEAR(base, -77.9566292437184501, 1e-9);
  EXPECT_NEAR(thermal_noise(290.0, 1.0, 10.0) - base, 10.0, 1e-12);
  EXPECT_NEAR(thermal_noise(290.0, 100.0, 1.0) - base, 20.0, 1e-12);
  EXPECT_THROW(thermal_noise(0.0, 1.0, 1.0), std::domain_error);
  EXPECT_THROW(thermal_noise(290.0, 1.0, -5.0), std::domain_error);
}

TEST(TurbulenceNoise, ReferencePoints) {
  EXPECT_DOUBLE_EQ(turbulence_noise(17.0, 1.0), 17.0);
  EXPECT_NEAR(turbulence_noise(17.0, 10.0), 37.0, 1e-12);
  EXPECT_NEAR(turbulence_noise(20.0, 0.5), 13.9794000867203761, 1e-12);
  EXPECT_THROW(turbulence_noise(17.0, 0.0), std::domain_error);
}

TEST(StormNoise, ReferencePoints) {
  EXPECT_NEAR(storm_noise(400.0, 10.0), 53.1938200260161128, 1e-12);
  EXPECT_NEAR(storm_noise(1.0, 10.0), 54.9999837140078223, 1e-12);
  EXPECT_NEAR(storm_noise(400.0, 20.0), 60.1175099262876803, 1e-12);
  EXPECT_THROW(storm_noise(0.0, 10.0), std::domain_error);
  EXPECT_THROW(storm_noise(400.0, 0.0), std::domain_error);
}

TEST(TotalSpl, ReferencePoints) {
  const std::vector<double> one{60.0}, two{60.0, 60.0}, three{60.0, 40.0, 30.0};
  EXPECT_NEAR(total_spl(one), 60.0, 1e-12);
  EXPECT_NEAR(total_spl(two), 63.0102999566398120, 1e-12);
  EXPECT_NEAR(total_spl(three), 60.0475115559100106, 1e-12);
  EXPECT_THROW(total_spl(std::vector<double>{}), std::domain_error);
}

TEST(TotalSpl, BoundsPermutationAndMonotonicity) {
  uasn::Rng rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    const int n = 1 + static_cast<int>(rng.index(8));
    std::vector<double> levels(n);
    for (auto& l : levels) l = rng.uniform(-80.0, 200.0);
    const double total = total_spl(levels);
    const double mx = *std::max_element(levels.begin(), levels.end());
    EXPECT_GE(total, mx - 1e-12);
    EXPECT_LE(total, mx + 10.0 * std::log10(n) + 1e-12);

    auto shuffled = levels;
    std::reverse(shuffled.begin(), shuffled.end());
    std::rotate(shuffled.begin(), shuffled.begin() + rng.index(n), shuffled.end());
    EXPECT_NEAR(total_spl(shuffled), total, 1e-9);

    levels.push_back(rng.uniform(-80.0, 200.0));
    EXPECT_GE(total_spl(levels), total - 1e-12);
  }
}

TEST(ThermalNoise, ScalingIsAdditiveInDecibels) {
  uasn::Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const double t = rng.uniform(250.0, 320.0), r = rng.uniform(0.1, 100.0), b = rng.uniform(1.0, 1e5);
    const double base = thermal_noise(t, r, b);
    EXPECT_NEAR(thermal_noise(t, r, 10.0 * b) - base, 10.0, 1e-9);
    EXPECT_NEAR(thermal_noise(t, 10.0 * r, b) - base, 10.0, 1e-9);
  }
}

TEST(SourceModels, SmoothAtRandomPoints) {
  uasn::Rng rng(3);
  // Central and one-sided slopes agree wherever the models are smooth.
  auto check = [](auto f, double x) {
    const double h = 1e-5 * std::max(1.0, std::abs(x));
    const double central = (f(x + h) - f(x - h)) / (2 * h);
    const double forward = (f(x + 2 * h) - f(x)) / (2 * h);
    EXPECT_NEAR(central, forward, 1e-3 * std::max(1.0, std::abs(central)));
  };
  for (int trial = 0; trial < 100; ++trial) {
    const double f = rng.uniform(10.0, 50000.0), v = rng.uniform(0.5, 20.0), rho = rng.uniform(0.001, 1.0);
    const double u = rng.uniform(0.5, 30.0);
    check([&](double x) { return vehicle_noise(x, v, rho); }, f);
    check([&](double x) { return vehicle_noise(f, x, rho); }, v);
    check([&](double x) { return thermal_noise(x, 1.0, 1e4); }, rng.uniform(250.0, 320.0));
    check([&](double x) { return turbulence_noise(17.0, x); }, u);
    check([&](double x) { return storm_noise(x, u); }, f);
    check([&](double x) { return storm_noise(f, x); }, u);
  }
}

TEST(SourceLevels, FixedOrderAndStormSwitch) {
  NoiseSourceParams p;
  auto levels = source_levels(p);
  ASSERT_EQ(levels.size(), 4u);
  EXPECT_DOUBLE_EQ(levels[0], vehicle_noise(p.frequency_hz, p.vehicle_speed, p.vehicle_density));
  EXPECT_DOUBLE_EQ(levels[1], thermal_noise(p.temperature_k, p.resistance_ohm, p.bandwidth_hz));
  EXPECT_DOUBLE_EQ(levels[2], turbulence_noise(p.base_turbulence_db, p.turbulence_speed));
  EXPECT_DOUBLE_EQ(levels[3], storm_noise(p.frequency_hz, p.wind_speed));
  p.wind_speed = 0.0;
  EXPECT_EQ(source_levels(p).size(), 3u);
  p.frequency_hz = 20.0;
  p.frequency_scale = 1000.0;
  EXPECT_DOUBLE_EQ(source_levels(p)[0], vehicle_noise(20000.0, p.vehicle_speed, p.vehicle_density));
}
