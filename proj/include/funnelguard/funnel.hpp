#pragma once

#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace funnelguard {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Bijection alpha(s) = 1/(1-s) on [0,1) and its derivative.
[[nodiscard]] inline double alpha(double s) noexcept { return 1.0 / (1.0 - s); }
[[nodiscard]] inline double alpha_prime(double s) noexcept {
    const double d = 1.0 - s;
    return 1.0 / (d * d);
}

/// Performance funnel phi = 1/psi with boundary width psi(t).
///
/// Only families with closed-form sup-norms are offered:
///   Constant:   psi(t) = psi0
///   ExpShrink:  psi(t) = (psi0 - psi_inf) exp(-a t) + psi_inf
class FunnelSpec {
public:
    enum class Family { Constant, ExpShrink };

    static FunnelSpec constant(double width);
    static FunnelSpec exp_shrink(double width0, double width_inf, double decay);

    [[nodiscard]] Family family() const noexcept { return family_; }
    [[nodiscard]] double width0() const noexcept { return width0_; }
    [[nodiscard]] double width_inf() const noexcept { return width_inf_; }
    [[nodiscard]] double decay() const noexcept { return decay_; }

    [[nodiscard]] double width(double t) const noexcept;
    [[nodiscard]] double phi(double t) const noexcept { return 1.0 / width(t); }
    [[nodiscard]] double phi_dot(double t) const noexcept;

    /// inf_{t>=0} phi(t)
    [[nodiscard]] double phi_inf() const noexcept { return 1.0 / width0_; }
    /// ||phi||_inf
    [[nodiscard]] double phi_sup() const noexcept { return 1.0 / width_inf_; }
    /// ||phi_dot / phi||_inf, attained at t = 0 for ExpShrink.
    [[nodiscard]] double log_deriv_sup() const noexcept;

private:
    FunnelSpec(Family family, double width0, double width_inf, double decay)
        : family_(family), width0_(width0), width_inf_(width_inf), decay_(decay) {}

    Family family_;
    double width0_;
    double width_inf_;
    double decay_;
};

/// Reference y_ref with derivatives up to order r and a certified bound on ||y_ref^{(r)}||_inf.
class ReferenceSpec {
public:
    /// Returns (y_ref(t), y_ref'(t), ..., y_ref^{(r)}(t)); must have r+1 entries of dimension m.
    using Evaluator = std::function<std::vector<Vector>(double)>;

    ReferenceSpec(Evaluator evaluator, double rth_deriv_sup, int dim, int order);

    /// A sin(omega t) in every output component.
    static ReferenceSpec sinusoid(double amplitude, double omega, int order, int dim = 1);
    static ReferenceSpec zero(int order, int dim = 1);

    [[nodiscard]] std::vector<Vector> evaluate(double t) const;
    [[nodiscard]] double rth_deriv_sup() const noexcept { return rth_deriv_sup_; }
    [[nodiscard]] int dim() const noexcept { return dim_; }
    [[nodiscard]] int order() const noexcept { return order_; }

private:
    Evaluator evaluator_;
    double rth_deriv_sup_;
    int dim_;
    int order_;
};

/// Error variables e_1 ... e_r at time t.
struct ErrorState {
    double t = 0.0;
    std::vector<Vector> e;

    [[nodiscard]] int order() const noexcept { return static_cast<int>(e.size()); }
    [[nodiscard]] const Vector& last() const { return e.back(); }
    [[nodiscard]] double norm(int k) const { return e.at(static_cast<std::size_t>(k)).norm(); }
};

/// Computes e_1 = phi (chi_1 - y_ref) and
/// e_{k+1} = phi (chi_{k+1} - y_ref^{(k)}) + alpha(||e_k||^2) e_k.
/// Throws NonFinite when some ||e_k|| >= 1 with k < r.
[[nodiscard]] ErrorState error_variables(double t, std::span<const Vector> chi,
                                         const ReferenceSpec& ref, const FunnelSpec& funnel);

/// Non-throwing variant: fills as many e_k as are defined and returns false if the chain broke.
bool try_error_variables(double t, std::span<const Vector> chi, const ReferenceSpec& ref,
                         const FunnelSpec& funnel, ErrorState& out);

struct DynamicsBounds {
    double f_max = 0.0;
    double g_max = 0.0;
    double g_min = 0.0;
    double disturbance = 0.0;  ///< D, bound on ||d||_inf (0 = no disturbance)

    void validate() const;
};

/// Unique eps in [0,1) with eps / (1 - eps^2) = rhs, by bisection.
[[nodiscard]] double solve_epsilon_hat(double rhs);

struct FeasibilityConstants {
    std::vector<double> eps;
    std::vector<double> mu;
    std::vector<double> gamma_bar;
};

/// The recursive constants eps_k, mu_k, gamma_bar_k for k = 1 ... r-1.
[[nodiscard]] FeasibilityConstants feasibility_constants(const FunnelSpec& funnel,
                                                         std::span<const double> e0_norms,
                                                         int order);

struct FeasibilityCertificate {
    std::vector<double> eps;
    std::vector<double> mu;
    std::vector<double> gamma_bar;

    double kappa0 = 0.0;
    double beta = 0.0;       ///< infimal admissible input gain (plus margin)
    double kappa1 = 0.0;
    double tau_max = 0.0;    ///< sampling bound for the pure ZoH law
    double lambda = 0.0;
    double u_sup_bound = 0.0;  ///< beta / lambda

    // Combined law with ||u_data|| <= u_max. The delegate input is folded into the
    // drift bound: kappa0' = kappa0 + phi_sup g_max u_max, with beta' and kappa1'
    // following from kappa0' exactly as in the pure case.
    double u_max = 0.0;
    double kappa0_combined = 0.0;
    double beta_combined = 0.0;
    double kappa1_combined = 0.0;
    double tau_max_combined = 0.0;
    /// min{kappa0/kappa1^2, (1-lambda)/(kappa0 + phi_sup g_max u_max)} with the pure-law beta.
    double tau_max_combined_fixed_gain = 0.0;

    // Inputs retained so that bounds for other gains can be evaluated.
    double phi_sup = 0.0;
    double phi_inf = 0.0;
    double g_max = 0.0;
    double g_min = 0.0;
};

struct CertificateOptions {
    double margin = 0.0;  ///< beta = (1 + margin) * infimum
};

/// Relative amount by which beta exceeds its strict lower bound.
inline constexpr double kBetaNudge = 1e-9;

[[nodiscard]] FeasibilityCertificate certificate(const FunnelSpec& funnel, const ReferenceSpec& ref,
                                                 const DynamicsBounds& bounds,
                                                 std::span<const double> e0_norms, double lambda,
                                                 double u_max, CertificateOptions options = {});

/// Smallest gain that satisfies beta > 2 kappa0 / (g_min inf phi), without nudge.
[[nodiscard]] double beta_infimum(const FeasibilityCertificate& cert) noexcept;

/// min{kappa0/kappa1(beta)^2, (1-lambda)/(kappa0 + phi_sup g_max u_max)} for a given gain.
[[nodiscard]] double tau_bound(const FeasibilityCertificate& cert, double beta,
                               double u_max) noexcept;

}  // namespace funnelguard
