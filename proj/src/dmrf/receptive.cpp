#include "gprinv/dmrf.hpp"
#include "gprinv/error.hpp"

namespace gprinv::dmrf {

std::size_t receptive_field(const std::vector<std::size_t>& kernels,
                            const std::vector<std::size_t>& strides) {
  if (kernels.empty() || strides.empty()) fail(ErrorCode::EmptySpec, "empty layer list");
  if (kernels.size() != strides.size()) {
    fail(ErrorCode::InvalidConfig, "kernel and stride lists differ in length");
  }
  std::size_t r = 1, jump = 1;
  for (std::size_t i = 0; i < kernels.size(); ++i) {
    if (kernels[i] == 0 || strides[i] == 0) {
      fail(ErrorCode::InvalidConfig, "kernel and stride entries must be >= 1");
    }
    r += (kernels[i] - 1) * jump;
    jump *= strides[i];
  }
  return r;
}

ReplacementCount replacement_param_count(std::size_t kernel, std::size_t channels) {
  if (channels == 0) fail(ErrorCode::InvalidConfig, "channel count must be >= 1");
  const std::size_t c2 = channels * channels;
  switch (kernel) {
    case 5:
      return {25 * c2, 2 * 9 * c2};
    case 7:
      return {49 * c2, 3 * 9 * c2};
    default:
      fail(ErrorCode::UnsupportedKernel,
           "only 5x5 and 7x7 kernels have a cascaded 3x3 replacement, got " +
               std::to_string(kernel));
  }
}

const std::vector<std::vector<std::size_t>>& mrf_branch_kernels() {
  static const std::vector<std::vector<std::size_t>> k{{1}, {3}, {3, 3}, {3, 3, 3}};
  return k;
}

}  // namespace gprinv::dmrf
