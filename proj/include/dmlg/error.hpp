#pragma once

#include <stdexcept>
#include <string>

namespace dmlg {

// Failure categories surfaced by the library. The CLI maps these onto
// process exit codes.
enum class errc {
  invalid_argument,
  invalid_partition,
  invalid_table,
  degenerate_norm,
  transform,
  degenerate_grid,
  degenerate_treatment,
  nonconvergence,
  incomparable_runs,
  configuration,
  missing_final,
  ambiguous_final,
  parse,
  service,
  prediction_unavailable,
  io,
};

inline const char* errc_name(errc c) {
  switch (c) {
    case errc::invalid_argument: return "invalid-argument";
    case errc::invalid_partition: return "invalid-partition";
    case errc::invalid_table: return "invalid-table";
    case errc::degenerate_norm: return "degenerate-norm";
    case errc::transform: return "transform";
    case errc::degenerate_grid: return "degenerate-grid";
    case errc::degenerate_treatment: return "degenerate-treatment-variation";
    case errc::nonconvergence: return "nonconvergence";
    case errc::incomparable_runs: return "incomparable-runs";
    case errc::configuration: return "configuration";
    case errc::missing_final: return "missing-final";
    case errc::ambiguous_final: return "ambiguous-final";
    case errc::parse: return "parse";
    case errc::service: return "service";
    case errc::prediction_unavailable: return "prediction-unavailable";
    case errc::io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(errc kind, const std::string& message)
      : std::runtime_error(std::string(errc_name(kind)) + ": " + message), kind_(kind) {}

  errc kind() const noexcept { return kind_; }

 private:
  errc kind_;
};

[[noreturn]] inline void raise(errc kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace dmlg
