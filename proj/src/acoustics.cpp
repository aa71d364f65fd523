#include "uasn/acoustics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace uasn::acoustics {
namespace {

void require_positive(double value, const char* name) {
  if (!(value > 0.0) || !std::isfinite(value)) {
    throw std::domain_error(std::string(name) + " must be positive and finite");
  }
}

}  // namespace

void validate(const NoiseSourceParams& p) {
  require_positive(p.frequency_hz, "frequency_hz");
  require_positive(p.frequency_scale, "frequency_scale");
  require_positive(p.vehicle_speed, "vehicle_speed");
  require_positive(p.vehicle_density, "vehicle_density");
  require_positive(p.temperature_k, "temperature_k");
  require_positive(p.resistance_ohm, "resistance_ohm");
  require_positive(p.bandwidth_hz, "bandwidth_hz");
  require_positive(p.turbulence_speed, "turbulence_speed");
  if (!std::isfinite(p.base_turbulence_db)) throw std::domain_error("base_turbulence_db must be finite");
  if (!(p.wind_speed >= 0.0) || !std::isfinite(p.wind_speed)) {
    throw std::domain_error("wind_speed must be non-negative");
  }
}

double vehicle_noise(double f, double v_s, double rho_n) {
  require_positive(f, "frequency");
  require_positive(v_s, "vehicle speed");
  require_positive(rho_n, "vehicle density");
  return 186.0 - 20.0 * std::log10(f) + 6.0 * std::log10(v_s / kReferenceVehicleSpeed) +
         10.0 * std::log10(rho_n);
}

double thermal_noise(double t, double r, double b) {
  require_positive(t, "temperature");
  require_positive(r, "resistance");
  require_positive(b, "bandwidth");
  const double spectral_density = 4.0 * kBoltzmann * t * r;
  const double power = spectral_density * b;
  return 10.0 * std::log10(power / kReferencePower);
}

double turbulence_noise(double base_db, double u_turb) {
  require_positive(u_turb, "turbulence speed");
  return base_db + 20.0 * std::log10(u_turb);
}

double storm_noise(double f, double u_wind) {
  require_positive(f, "frequency");
  require_positive(u_wind, "wind speed");
  const double knee = f / 400.0;
  return 55.0 - 6.0 * std::log10(knee * knee + 1.0) +
         (18.0 + u_wind / 4.0) * std::log10(u_wind / 10.0);
}

double total_spl(std::span<const double> levels_db) {
  if (levels_db.empty()) throw std::domain_error("total_spl needs at least one source");
  // Factor out the loudest source so large levels do not overflow.
  const double peak = *std::max_element(levels_db.begin(), levels_db.end());
  double sum = 0.0;
  for (double level : levels_db) sum += std::pow(10.0, (level - peak) / 10.0);
  return peak + 10.0 * std::log10(sum);
}

std::vector<double> source_levels(const NoiseSourceParams& p) {
  validate(p);
  const double f = p.frequency_hz * p.frequency_scale;
  std::vector<double> levels{
      vehicle_noise(f, p.vehicle_speed, p.vehicle_density),
      thermal_noise(p.temperature_k, p.resistance_ohm, p.bandwidth_hz),
      turbulence_noise(p.base_turbulence_db, p.turbulence_speed),
  };
  if (p.wind_speed > 0.0) levels.push_back(storm_noise(f, p.wind_speed));
  return levels;
}

}  // namespace uasn::acoustics
