#include <cmath>
#include <numbers>
#include <string>

#include "gprinv/error.hpp"
#include "gprinv/scene.hpp"

namespace gprinv::scene {

namespace {

// Free water Debye parameters (gprMax defaults).
constexpr double kWaterEpsInf = 4.9;
constexpr double kWaterEpsStatic = 80.1;
constexpr double kWaterTau = 9.231e-12;  // s
constexpr double kAlpha = 0.65;

}  // namespace

void SoilSpec::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorCode::InvalidRange, "SoilSpec: " + what); };
  if (sand_fraction < 0.0 || sand_fraction > 1.0) bad("sand_fraction outside [0,1]");
  if (clay_fraction < 0.0 || clay_fraction > 1.0) bad("clay_fraction outside [0,1]");
  if (std::abs(sand_fraction + clay_fraction - 1.0) > 1e-9) bad("sand + clay must equal 1");
  if (!(water_fraction_min >= 0.0 && water_fraction_max <= 1.0)) bad("water fractions outside [0,1]");
  if (!(water_fraction_min < water_fraction_max)) bad("water_fraction_min must be < max");
  if (n_materials < 1) bad("n_materials must be >= 1");
  if (!(bulk_density > 0.0) || !(particle_density > bulk_density)) {
    bad("need 0 < bulk_density < particle_density");
  }
}

Material peplinski_material(const SoilSpec& soil, double water_fraction, double frequency) {
  if (!(frequency >= kPeplinskiMinFrequency && frequency <= kPeplinskiMaxFrequency)) {
    fail(ErrorCode::OutOfRange, "frequency " + std::to_string(frequency) +
                                    " Hz outside the 0.3-1.3 GHz model band");
  }
  if (!(water_fraction >= soil.water_fraction_min && water_fraction <= soil.water_fraction_max) ||
      !(water_fraction > 0.0)) {
    fail(ErrorCode::OutOfRange, "water fraction " + std::to_string(water_fraction) +
                                    " outside the soil's range");
  }
  const double s = soil.sand_fraction;
  const double c = soil.clay_fraction;
  const double rb = soil.bulk_density;
  const double rs = soil.particle_density;
  const double mu = water_fraction;

  const double wt = 2.0 * std::numbers::pi * frequency * kWaterTau;
  const double delta_w = kWaterEpsStatic - kWaterEpsInf;
  const double water_real = kWaterEpsInf + delta_w / (1.0 + wt * wt);

  const double eps_solid = std::pow(1.01 + 0.44 * rs, 2) - 0.062;
  const double beta1 = 1.2748 - 0.519 * s - 0.152 * c;
  const double beta2 = 1.33797 - 0.603 * s - 0.166 * c;
  const double sigma_eff = 0.0467 + 0.2204 * rb - 0.411 * s + 0.6614 * c;

  const double real_part =
      std::pow(1.0 + (rb / rs) * (std::pow(eps_solid, kAlpha) - 1.0) +
                   std::pow(mu, beta1) * std::pow(water_real, kAlpha) - mu,
               1.0 / kAlpha);
  const double eps_static = 1.15 * real_part - 0.68;
  const double water_term = std::pow(mu, beta2 / kAlpha);

  Material m;
  m.eps_r = eps_static - water_term * delta_w;
  m.sigma = water_term * (sigma_eff * (rs - rb)) / (rs * mu);
  return m;
}

std::vector<double> water_fraction_bins(const SoilSpec& soil) {
  soil.validate();
  const auto n = static_cast<std::size_t>(soil.n_materials);
  const double width = (soil.water_fraction_max - soil.water_fraction_min) / static_cast<double>(n);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = soil.water_fraction_min + (static_cast<double>(i) + 0.5) * width;
  }
  return out;
}

std::vector<Material> soil_materials(const SoilSpec& soil, double frequency) {
  std::vector<Material> out;
  for (double wf : water_fraction_bins(soil)) out.push_back(peplinski_material(soil, wf, frequency));
  return out;
}

Material mean_soil_material(const SoilSpec& soil, double frequency) {
  const auto mats = soil_materials(soil, frequency);
  Material mean{0.0, 0.0};
  for (const auto& m : mats) {
    mean.eps_r += m.eps_r;
    mean.sigma += m.sigma;
  }
  mean.eps_r /= static_cast<double>(mats.size());
  mean.sigma /= static_cast<double>(mats.size());
  return mean;
}

}  // namespace gprinv::scene
