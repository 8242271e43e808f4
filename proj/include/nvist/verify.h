#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace nvist {

/// One measured property: worst error observed and the tolerance it must meet.
struct VerifyCheck {
  VerifyCheck(std::string name_, double error_, double tolerance_, std::string detail_ = {})
      : name(std::move(name_)), error(error_), tolerance(tolerance_), detail(std::move(detail_)) {}

  std::string name;
  double error = 0.0;
  double tolerance = 0.0;
  std::string detail;  // where the worst error occurred, when known
  bool passed() const { return error <= tolerance; }
};

struct SuiteReport {
  std::string suite;
  std::vector<VerifyCheck> checks;
  double seconds = 0.0;

  bool passed() const;
  /// Largest error / tolerance ratio over the checks (0 when every error is 0).
  double worst_ratio() const;
  double max_error() const;
};

/// gradcheck, vm, quadrature, camera, tokens, losses, persistence.
const std::vector<std::string>& verify_suite_names();

/// Runs one suite at 64-bit precision; throws ConfigError for an unknown name.
SuiteReport run_verify_suite(const std::string& name);

/// One line per check followed by a suite summary line.
void print_suite_report(const SuiteReport& report, std::ostream& out);

}  // namespace nvist
