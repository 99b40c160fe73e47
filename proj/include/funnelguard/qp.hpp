#pragma once

#include "funnelguard/funnel.hpp"

namespace funnelguard::qp {

struct Settings {
    double rho = 0.1;
    double sigma = 1e-6;
    double alpha = 1.6;
    double eps_abs = 1e-6;
    double eps_rel = 1e-6;
    int max_iter = 20000;
    bool adaptive_rho = true;
    int adaptive_rho_interval = 25;
    int scaling_iters = 10;
    bool polish = true;
    /// Try a polishing step every this many iterations (0: only after the main loop).
    int polish_interval = 100;
};

enum class Status { Solved, MaxIterations };

struct Result {
    Vector x;
    Vector y;
    double objective = 0.0;
    int iterations = 0;
    double primal_residual = 0.0;
    double dual_residual = 0.0;
    Status status = Status::MaxIterations;
    bool polished = false;
};

/// Bound value treated as infinite.
inline constexpr double kInfinity = 1e30;

/// min 1/2 x'Px + q'x  s.t.  l <= A x <= u, by ADMM with Ruiz equilibration.
/// P must be symmetric positive semidefinite; rows with l == u are equalities.
/// On MaxIterations the iterate with the smallest combined residual is returned.
[[nodiscard]] Result solve(const Matrix& P, const Vector& q, const Matrix& A, const Vector& l,
                           const Vector& u, const Settings& settings = {},
                           const Vector* warm_x = nullptr);

}  // namespace funnelguard::qp
