#include "funnelguard/funnel.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "funnelguard/error.hpp"

namespace funnelguard {

FunnelSpec FunnelSpec::constant(double width) {
    require(std::isfinite(width) && width > 0.0, ErrorCode::InvalidArgument,
            "funnel width must be positive");
    return FunnelSpec(Family::Constant, width, width, 0.0);
}

FunnelSpec FunnelSpec::exp_shrink(double width0, double width_inf, double decay) {
    require(std::isfinite(width0) && std::isfinite(width_inf) && width_inf > 0.0 &&
                width0 >= width_inf,
            ErrorCode::InvalidArgument, "exp-shrink funnel needs width0 >= width_inf > 0");
    require(std::isfinite(decay) && decay > 0.0, ErrorCode::InvalidArgument,
            "exp-shrink decay must be positive");
    return FunnelSpec(Family::ExpShrink, width0, width_inf, decay);
}

double FunnelSpec::width(double t) const noexcept {
    if (family_ == Family::Constant) return width0_;
    return (width0_ - width_inf_) * std::exp(-decay_ * t) + width_inf_;
}

double FunnelSpec::phi_dot(double t) const noexcept {
    if (family_ == Family::Constant) return 0.0;
    const double psi = width(t);
    const double psi_dot = -decay_ * (width0_ - width_inf_) * std::exp(-decay_ * t);
    return -psi_dot / (psi * psi);
}

double FunnelSpec::log_deriv_sup() const noexcept {
    if (family_ == Family::Constant) return 0.0;
    return decay_ * (width0_ - width_inf_) / width0_;
}

ReferenceSpec::ReferenceSpec(Evaluator evaluator, double rth_deriv_sup, int dim, int order)
    : evaluator_(std::move(evaluator)), rth_deriv_sup_(rth_deriv_sup), dim_(dim), order_(order) {
    require(static_cast<bool>(evaluator_), ErrorCode::InvalidArgument, "reference evaluator is empty");
    require(dim_ >= 1 && order_ >= 1, ErrorCode::InvalidArgument,
            "reference needs dim >= 1 and order >= 1");
    require(std::isfinite(rth_deriv_sup_) && rth_deriv_sup_ >= 0.0, ErrorCode::InvalidArgument,
            "rth_deriv_sup must be a finite non-negative bound");
}

ReferenceSpec ReferenceSpec::sinusoid(double amplitude, double omega, int order, int dim) {
    auto eval = [amplitude, omega, order, dim](double t) {
        std::vector<Vector> out;
        out.reserve(static_cast<std::size_t>(order) + 1);
        double scale = amplitude;
        for (int k = 0; k <= order; ++k) {
            // d^k/dt^k sin(wt) = w^k sin(wt + k pi/2)
            const double v = scale * std::sin(omega * t + k * std::numbers::pi / 2.0);
            out.push_back(Vector::Constant(dim, v));
            scale *= omega;
        }
        return out;
    };
    const double sup = std::abs(amplitude) * std::pow(std::abs(omega), order) * std::sqrt(dim);
    return ReferenceSpec(std::move(eval), sup, dim, order);
}

ReferenceSpec ReferenceSpec::zero(int order, int dim) {
    auto eval = [order, dim](double) {
        return std::vector<Vector>(static_cast<std::size_t>(order) + 1, Vector::Zero(dim));
    };
    return ReferenceSpec(std::move(eval), 0.0, dim, order);
}

std::vector<Vector> ReferenceSpec::evaluate(double t) const {
    auto values = evaluator_(t);
    require(values.size() == static_cast<std::size_t>(order_) + 1, ErrorCode::InvalidArgument,
            "reference returned " + std::to_string(values.size()) + " derivatives, expected " +
                std::to_string(order_ + 1));
    for (const auto& v : values) {
        require(v.size() == dim_, ErrorCode::InvalidArgument, "reference dimension mismatch");
    }
    return values;
}

bool try_error_variables(double t, std::span<const Vector> chi, const ReferenceSpec& ref,
                         const FunnelSpec& funnel, ErrorState& out) {
    const int r = ref.order();
    require(static_cast<int>(chi.size()) == r, ErrorCode::InvalidArgument,
            "output chain has " + std::to_string(chi.size()) + " entries, expected " +
                std::to_string(r));
    const auto y_ref = ref.evaluate(t);
    const double phi = funnel.phi(t);

    out.t = t;
    out.e.clear();
    out.e.reserve(static_cast<std::size_t>(r));
    out.e.push_back(phi * (chi[0] - y_ref[0]));
    for (int k = 1; k < r; ++k) {
        const Vector& prev = out.e.back();
        const double s = prev.squaredNorm();
        if (!(s < 1.0)) return false;
        out.e.push_back(phi * (chi[static_cast<std::size_t>(k)] - y_ref[static_cast<std::size_t>(k)]) +
                        alpha(s) * prev);
    }
    for (const auto& e : out.e) {
        if (!e.allFinite()) return false;
    }
    return true;
}

ErrorState error_variables(double t, std::span<const Vector> chi, const ReferenceSpec& ref,
                           const FunnelSpec& funnel) {
    ErrorState out;
    if (!try_error_variables(t, chi, ref, funnel, out)) {
        throw Error(ErrorCode::NonFinite,
                    "error variable e_" + std::to_string(out.e.size()) +
                        " left the unit ball at t = " + std::to_string(t));
    }
    return out;
}

void DynamicsBounds::validate() const {
    require(std::isfinite(f_max) && f_max > 0.0, ErrorCode::InvalidArgument, "f_max must be positive");
    require(std::isfinite(g_max) && g_max > 0.0, ErrorCode::InvalidArgument, "g_max must be positive");
    require(std::isfinite(g_min) && g_min > 0.0, ErrorCode::InvalidArgument, "g_min must be positive");
    require(g_min <= g_max, ErrorCode::InvalidArgument, "g_min must not exceed g_max");
    require(std::isfinite(disturbance) && disturbance >= 0.0, ErrorCode::InvalidArgument,
            "disturbance bound must be non-negative");
}

double solve_epsilon_hat(double rhs) {
    require(std::isfinite(rhs) && rhs >= 0.0, ErrorCode::InvalidArgument,
            "epsilon-hat right side must be finite and non-negative");
    if (rhs == 0.0) return 0.0;
    double lo = 0.0;
    double hi = 1.0 - 1e-15;
    // eps / (1 - eps^2) is strictly increasing on [0, 1)
    while (hi - lo > 1e-12) {
        const double mid = 0.5 * (lo + hi);
        if (alpha(mid * mid) * mid < rhs) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

FeasibilityConstants feasibility_constants(const FunnelSpec& funnel,
                                           std::span<const double> e0_norms, int order) {
    require(order >= 1, ErrorCode::InvalidArgument, "relative degree must be at least 1");
    require(static_cast<int>(e0_norms.size()) >= order - 1, ErrorCode::InvalidArgument,
            "need initial norms ||e_k(0)|| for k = 1 ... r-1");

    FeasibilityConstants out;
    const double log_deriv = funnel.log_deriv_sup();
    double eps_prev = 0.0;
    double gamma_prev = 0.0;
    for (int k = 1; k < order; ++k) {
        const double e0 = e0_norms[static_cast<std::size_t>(k - 1)];
        if (!(std::isfinite(e0) && e0 >= 0.0 && e0 < 1.0)) {
            throw Error(ErrorCode::InitialConditionInfeasible,
                        "||e_" + std::to_string(k) + "(0)|| = " + std::to_string(e0) +
                            " is not below 1");
        }
        const double carry = log_deriv * (1.0 + alpha(eps_prev * eps_prev) * eps_prev);
        const double eps_hat = solve_epsilon_hat(carry + 1.0 + gamma_prev);
        const double eps = std::max(e0, eps_hat);
        const double a = alpha(eps * eps);
        const double mu = carry + 1.0 + a * eps + gamma_prev;
        const double gamma = 2.0 * alpha_prime(eps * eps) * eps * eps * mu + a * mu;

        out.eps.push_back(eps);
        out.mu.push_back(mu);
        out.gamma_bar.push_back(gamma);
        eps_prev = eps;
        gamma_prev = gamma;
    }
    return out;
}

namespace {

struct GainChain {
    double kappa0;
    double beta;
    double kappa1;
    double tau;
};

GainChain gain_chain(double kappa0, double phi_inf, double phi_sup, double g_min, double g_max,
                     double lambda, double margin) {
    GainChain c{};
    c.kappa0 = kappa0;
    c.beta = (1.0 + margin) * (2.0 * kappa0 / (g_min * phi_inf)) * (1.0 + kBetaNudge);
    c.kappa1 = kappa0 + phi_sup * g_max * c.beta;
    c.tau = std::min(kappa0 / (c.kappa1 * c.kappa1), (1.0 - lambda) / kappa0);
    return c;
}

}  // namespace

FeasibilityCertificate certificate(const FunnelSpec& funnel, const ReferenceSpec& ref,
                                   const DynamicsBounds& bounds, std::span<const double> e0_norms,
                                   double lambda, double u_max, CertificateOptions options) {
    bounds.validate();
    require(lambda > 0.0 && lambda < 1.0, ErrorCode::InvalidArgument, "lambda must lie in (0,1)");
    require(std::isfinite(u_max) && u_max >= 0.0, ErrorCode::InvalidArgument,
            "u_max must be non-negative");
    require(std::isfinite(options.margin) && options.margin >= 0.0, ErrorCode::InvalidArgument,
            "beta margin must be non-negative");

    const int r = ref.order();
    auto consts = feasibility_constants(funnel, e0_norms, r);

    FeasibilityCertificate cert;
    const double eps_last = consts.eps.empty() ? 0.0 : consts.eps.back();
    const double gamma_last = consts.gamma_bar.empty() ? 0.0 : consts.gamma_bar.back();
    cert.eps = std::move(consts.eps);
    cert.mu = std::move(consts.mu);
    cert.gamma_bar = std::move(consts.gamma_bar);

    cert.lambda = lambda;
    cert.u_max = u_max;
    cert.phi_inf = funnel.phi_inf();
    cert.phi_sup = funnel.phi_sup();
    cert.g_min = bounds.g_min;
    cert.g_max = bounds.g_max;

    const double kappa0 = funnel.log_deriv_sup() * (1.0 + alpha(eps_last * eps_last) * eps_last) +
                          cert.phi_sup * (bounds.f_max + ref.rth_deriv_sup()) + gamma_last;

    const auto pure = gain_chain(kappa0, cert.phi_inf, cert.phi_sup, bounds.g_min, bounds.g_max,
                                 lambda, options.margin);
    cert.kappa0 = pure.kappa0;
    cert.beta = pure.beta;
    cert.kappa1 = pure.kappa1;
    cert.tau_max = pure.tau;
    cert.u_sup_bound = cert.beta / lambda;

    const auto comb = gain_chain(kappa0 + cert.phi_sup * bounds.g_max * u_max, cert.phi_inf,
                                 cert.phi_sup, bounds.g_min, bounds.g_max, lambda, options.margin);
    cert.kappa0_combined = comb.kappa0;
    cert.beta_combined = comb.beta;
    cert.kappa1_combined = comb.kappa1;
    cert.tau_max_combined = comb.tau;
    cert.tau_max_combined_fixed_gain = tau_bound(cert, cert.beta, u_max);
    return cert;
}

double beta_infimum(const FeasibilityCertificate& cert) noexcept {
    return 2.0 * cert.kappa0 / (cert.g_min * cert.phi_inf);
}

double tau_bound(const FeasibilityCertificate& cert, double beta, double u_max) noexcept {
    const double kappa1 = cert.kappa0 + cert.phi_sup * cert.g_max * beta;
    return std::min(cert.kappa0 / (kappa1 * kappa1),
                    (1.0 - cert.lambda) / (cert.kappa0 + cert.phi_sup * cert.g_max * u_max));
}

}  // namespace funnelguard
