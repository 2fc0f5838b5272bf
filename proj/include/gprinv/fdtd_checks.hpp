#pragma once

// Analytic-oracle checks of the FDTD solver, shared by the unit tests, the
// acceptance runner and `gprinv selftest`.

#include <string>
#include <vector>

#include "gprinv/fdtd.hpp"

namespace gprinv::fdtd {

struct CheckResult {
  std::string name;
  double measured = 0.0;
  double expected = 0.0;
  double tolerance = 0.0;  // meaning depends on the check; see detail
  bool pass = false;
  std::string detail;
};

// Free-space travel time: the lag between two receivers on a ray from the
// source (cross-correlation peak) against their path difference / c.
// Relative tolerance 2%.
CheckResult check_first_arrival(double cell_size = 0.01);

// Monostatic reflection off a half-space of eps_r (reflected = half-space
// trace minus free-space trace) relative to the direct wave at the image
// distance. Relative tolerance 10% against (1 - sqrt(eps)) / (1 + sqrt(eps)).
CheckResult check_fresnel(double eps_r, double cell_size = 0.01);

// Reflection ratio eps 4 vs eps 9 against (1/3) / (1/2). Tolerance 10%.
CheckResult check_fresnel_ratio(double cell_size = 0.01);

// Free-space interior energy 2 ns after the pulse has left the interior,
// as a fraction of its peak. Must be < 1%.
CheckResult check_pml(double cell_size = 0.01);

// Lossless heterogeneous scene: swapping TX and RX changes the trace by
// < 1% RMS.
CheckResult check_reciprocity(double cell_size = 0.01);

// Halving cell_size changes the received-peak time by < 1%.
CheckResult check_grid_scaling(double cell_size = 0.01);

std::vector<CheckResult> physics_checks(double cell_size = 0.01);

}  // namespace gprinv::fdtd
