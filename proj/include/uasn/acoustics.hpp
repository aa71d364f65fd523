#pragma once

#include <span>
#include <vector>

// Closed-form ambient noise source levels for underwater acoustic links and
// their aggregation in the decibel domain. All functions are pure and throw
// std::domain_error when an argument leaves the logarithm's domain.
namespace uasn::acoustics {

inline constexpr double kBoltzmann = 1.38e-23;        // J/K
inline constexpr double kReferencePower = 1e-12;      // W (1 pW)
inline constexpr double kReferenceVehicleSpeed = 6.18;

struct NoiseSourceParams {
  double frequency_hz = 20000.0;
  // Multiplies frequency_hz before evaluation, e.g. 1000 when the configured
  // value is in kHz.
  double frequency_scale = 1.0;
  double vehicle_speed = kReferenceVehicleSpeed;
  double vehicle_density = 0.01;
  double temperature_k = 290.0;
  double resistance_ohm = 1.0;
  double bandwidth_hz = 10000.0;
  double base_turbulence_db = 17.0;
  double turbulence_speed = 1.0;
  // Zero disables the storm source.
  double wind_speed = 10.0;
};

void validate(const NoiseSourceParams& params);

double vehicle_noise(double frequency_hz, double vehicle_speed, double vehicle_density);
double thermal_noise(double temperature_k, double resistance_ohm, double bandwidth_hz);
double turbulence_noise(double base_db, double turbulence_speed);
double storm_noise(double frequency_hz, double wind_speed);

// 10 lg(sum 10^(L/10)); throws on an empty sequence.
double total_spl(std::span<const double> levels_db);

// Levels of every active source in fixed order: vehicle, thermal,
// turbulence, then storm when wind_speed > 0.
std::vector<double> source_levels(const NoiseSourceParams& params);

inline double total_spl(const NoiseSourceParams& params) {
  const auto levels = source_levels(params);
  return total_spl(levels);
}

}  // namespace uasn::acoustics
