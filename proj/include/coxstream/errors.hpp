#pragma once

#include <stdexcept>
#include <string>

namespace coxstream {

struct invalid_input_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Block contains no events; the streaming statistics are undefined on it.
struct degenerate_block_error : invalid_input_error {
  using invalid_input_error::invalid_input_error;
};

/// No subject is at risk at the requested time.
struct empty_risk_set_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A matrix that must be inverted (information, H) is numerically singular.
struct singular_matrix_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Monotone-likelihood divergence: the coefficient norm exceeded the solver bound.
struct separation_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A fit did not converge where a converged fit is required.
struct convergence_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Time value outside the domain of the requested transform.
struct invalid_time_error : invalid_input_error {
  using invalid_input_error::invalid_input_error;
};

struct checkpoint_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace coxstream
