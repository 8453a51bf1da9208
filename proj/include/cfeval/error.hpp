#pragma once

#include <stdexcept>
#include <string>

namespace cfeval {

// Error codes group into exit-code categories at the CLI boundary:
// usage -> 3, the five file-level io codes -> 2, everything else -> 1.
enum class Errc {
  // linalg
  not_square,
  not_symmetric,
  no_convergence,
  negative_eigenvalue,
  too_few_samples,
  dimension_mismatch,
  // data / metrics
  support_mismatch,
  not_a_distribution,
  missing_targets,
  missing_oracle,
  missing_field,
  unknown_label,
  unknown_metric,
  length_mismatch,
  empty_selection,
  empty_input,
  out_of_range,
  metric_mismatch,
  method_set_mismatch,
  // synth
  spec_invalid,
  unknown_attribute,
  already_target,
  no_valid_alpha,
  too_narrow,
  // io (these five map to exit 2)
  io_failure,
  unsupported_dtype,
  malformed_header,
  ragged_rows,
  missing_manifest,
  // bundle/report level
  validation_failed,
  empty_report_set,
  // cli (exit 3)
  usage,
};

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
  Errc code() const { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& msg) { throw Error(code, msg); }

inline void require(bool cond, Errc code, const std::string& msg) {
  if (!cond) fail(code, msg);
}

}  // namespace cfeval
