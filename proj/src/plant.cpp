#include "funnelguard/plant.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "funnelguard/error.hpp"

namespace funnelguard {

void PlantModel::validate(double check_horizon, int check_points) const {
    require(state_dim >= 1 && input_dim >= 1 && relative_degree >= 1, ErrorCode::InvalidArgument,
            "plant dimensions must be positive");
    require(static_cast<bool>(rhs) && static_cast<bool>(output_chain), ErrorCode::InvalidArgument,
            "plant needs rhs and output chain");
    require(std::isfinite(disturbance_bound) && disturbance_bound >= 0.0,
            ErrorCode::InvalidArgument, "disturbance bound must be non-negative");
    if (disturbance_dim == 0) return;
    require(static_cast<bool>(disturbance), ErrorCode::InvalidArgument,
            "plant declares a disturbance input but no disturbance signal");
    // Sampling-based check only: d is sampled on a uniform grid.
    for (int i = 0; i < check_points; ++i) {
        const double t = check_horizon * i / std::max(1, check_points - 1);
        const Vector d = disturbance(t);
        require(d.size() == disturbance_dim, ErrorCode::InvalidArgument,
                "disturbance dimension mismatch");
        if (!(d.norm() <= disturbance_bound)) {
            throw Error(ErrorCode::InvalidArgument,
                        "disturbance norm " + std::to_string(d.norm()) + " at t = " +
                            std::to_string(t) + " exceeds the bound D = " +
                            std::to_string(disturbance_bound));
        }
    }
}

Vector PlantModel::derivative(double t, const Vector& x, const Vector& u) const {
    const Vector d = disturbance_dim > 0 ? disturbance(t) : Vector();
    return rhs(t, x, u, d);
}

void MassOnCarParams::validate() const {
    require(m1 > 0.0 && m2 > 0.0, ErrorCode::InvalidArgument, "masses must be positive");
    require(theta > 0.0 && theta < std::numbers::pi / 2.0, ErrorCode::InvalidArgument,
            "ramp angle must lie in (0, pi/2)");
    require(std::isfinite(k) && std::isfinite(damping), ErrorCode::InvalidArgument,
            "spring and damping constants must be finite");
}

PlantModel mass_on_car(const MassOnCarParams& params, PlantModel::Disturbance disturbance,
                       double disturbance_bound) {
    params.validate();
    const double c = std::cos(params.theta);
    const double m11 = params.m1 + params.m2;
    const double m12 = params.m2 * c;
    const double m22 = params.m2;
    const double det = m11 * m22 - m12 * m12;
    if (!(det > 1e-12)) {
        throw Error(ErrorCode::SingularMassMatrix,
                    "mass matrix determinant " + std::to_string(det) + " below 1e-12");
    }

    PlantModel model;
    model.state_dim = 4;
    model.input_dim = 1;
    model.relative_degree = 2;
    model.disturbance_dim = disturbance ? 1 : 0;
    model.disturbance = std::move(disturbance);
    model.disturbance_bound = disturbance_bound;

    const double k = params.k;
    const double damping = params.damping;
    model.rhs = [=](double, const Vector& x, const Vector& u, const Vector& d) {
        const double force = u[0] + (d.size() > 0 ? d[0] : 0.0);
        const double spring = -k * x[1] - damping * x[3];
        Vector dx(4);
        dx[0] = x[2];
        dx[1] = x[3];
        dx[2] = (m22 * force - m12 * spring) / det;
        dx[3] = (-m12 * force + m11 * spring) / det;
        return dx;
    };
    model.output_chain = [c](const Vector& x) {
        return std::vector<Vector>{Vector::Constant(1, x[0] + c * x[1]),
                                   Vector::Constant(1, x[2] + c * x[3])};
    };

    const double m1c = params.m1 * c;
    const double gain = params.m2 * (1.0 - c * c) / det;
    model.affine_form = [=](double, const Vector& x) {
        const double f = -m1c * (k * x[1] + damping * x[3]) / det;
        return std::pair<Vector, Matrix>(Vector::Constant(1, f), Matrix::Constant(1, 1, gain));
    };

    model.validate();
    return model;
}

Vector mass_on_car_initial_state(const MassOnCarParams& params, double y0, double ydot0) {
    params.validate();
    Vector x = Vector::Zero(4);
    x[0] = y0;
    x[2] = ydot0;
    return x;
}

PlantModel integrator_chain(int dim) {
    PlantModel model;
    model.state_dim = dim;
    model.input_dim = dim;
    model.relative_degree = 1;
    model.rhs = [](double, const Vector&, const Vector& u, const Vector&) { return u; };
    model.output_chain = [](const Vector& x) { return std::vector<Vector>{x}; };
    model.affine_form = [dim](double, const Vector&) {
        return std::pair<Vector, Matrix>(Vector::Zero(dim), Matrix::Identity(dim, dim));
    };
    model.validate();
    return model;
}

IntervalResult integrate_interval(const PlantModel& model, const Vector& x0, const Vector& u,
                                  double t0, double tau, int substeps) {
    require(substeps >= 1, ErrorCode::InvalidArgument, "substeps must be >= 1");
    require(tau > 0.0 && std::isfinite(tau), ErrorCode::InvalidArgument, "tau must be positive");
    require(x0.size() == model.state_dim, ErrorCode::InvalidArgument, "state dimension mismatch");
    require(u.size() == model.input_dim, ErrorCode::InvalidArgument, "input dimension mismatch");

    IntervalResult out;
    out.samples.reserve(static_cast<std::size_t>(substeps) + 1);
    out.samples.push_back({t0, x0});

    const double h = tau / substeps;
    Vector x = x0;
    for (int j = 0; j < substeps; ++j) {
        const double t = t0 + j * h;
        const Vector k1 = model.derivative(t, x, u);
        const Vector k2 = model.derivative(t + 0.5 * h, x + 0.5 * h * k1, u);
        const Vector k3 = model.derivative(t + 0.5 * h, x + 0.5 * h * k2, u);
        const Vector k4 = model.derivative(t + h, x + h * k3, u);
        x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if (!x.allFinite()) {
            throw Error(ErrorCode::NonFiniteState,
                        "state became non-finite at t = " + std::to_string(t + h));
        }
        out.samples.push_back({j + 1 == substeps ? t0 + tau : t0 + (j + 1) * h, x});
    }
    out.x_end = x;
    return out;
}

std::string_view to_string(ControlMode mode) noexcept {
    switch (mode) {
        case ControlMode::SafeFeedback: return "SAFE_FEEDBACK";
        case ControlMode::ZohFeedback: return "ZOH_FEEDBACK";
        case ControlMode::Zero: return "ZERO";
        case ControlMode::Random: return "RANDOM";
    }
    return "UNKNOWN";
}

namespace {

DenseSample make_dense(const PlantModel& model, const FunnelSpec& funnel, const ReferenceSpec& ref,
                       double t, std::size_t interval, const Vector& x, const Vector& u,
                       ControlMode mode, bool& violated) {
    DenseSample s;
    s.t = t;
    s.interval = interval;
    s.x = x;
    s.chi = model.output_chain(x);
    s.y_ref = ref.evaluate(t).front();
    s.width = funnel.width(t);
    s.u = u;
    s.mode = mode;

    ErrorState errors;
    const bool ok = try_error_variables(t, s.chi, ref, funnel, errors);
    const int r = model.relative_degree;
    s.e_norms.assign(static_cast<std::size_t>(r), std::numeric_limits<double>::quiet_NaN());
    for (std::size_t k = 0; k < errors.e.size(); ++k) s.e_norms[k] = errors.e[k].norm();
    s.e = std::move(errors.e);

    violated = !ok;
    for (int k = 0; k + 1 < r && !violated; ++k) {
        if (!(s.e_norms[static_cast<std::size_t>(k)] < 1.0)) violated = true;
    }
    if (!violated && !(s.e_norms.back() <= 1.0)) violated = true;
    return s;
}

}  // namespace

Trajectory run_closed_loop(const PlantModel& model, const FunnelSpec& funnel,
                           const ReferenceSpec& ref, const Policy& policy, const Vector& x0,
                           const ClosedLoopOptions& options) {
    require(options.tau > 0.0 && std::isfinite(options.tau), ErrorCode::InvalidArgument,
            "tau must be positive");
    require(options.horizon >= 0.0 && std::isfinite(options.horizon), ErrorCode::InvalidArgument,
            "horizon must be non-negative");
    require(options.substeps >= 1, ErrorCode::InvalidArgument, "substeps must be >= 1");
    require(ref.order() == model.relative_degree, ErrorCode::InvalidArgument,
            "reference order must equal the relative degree");
    require(ref.dim() == model.input_dim, ErrorCode::InvalidArgument,
            "reference dimension must equal the input dimension");
    require(static_cast<bool>(policy), ErrorCode::InvalidArgument, "policy is empty");

    Trajectory traj;
    traj.output_dim = ref.dim();
    traj.input_dim = model.input_dim;
    traj.relative_degree = model.relative_degree;
    traj.tau = options.tau;

    std::mt19937_64 rng(options.seed);
    const double tau = options.tau;
    const double h = tau / options.substeps;
    const double end_slack = 1e-9 * std::max(1.0, options.horizon);

    auto note_violation = [&traj](bool violated, double t) {
        if (violated && !traj.funnel_violated) {
            traj.funnel_violated = true;
            traj.first_violation_time = t;
        }
    };

    Vector x = x0;
    Vector u_prev = Vector::Zero(model.input_dim);
    for (std::size_t i = 0;; ++i) {
        const double t_i = static_cast<double>(i) * tau;
        if (t_i >= options.horizon - end_slack) break;
        const double t_end = std::min(t_i + tau, options.horizon);
        const double len = t_end - t_i;

        SampleContext ctx;
        ctx.index = i;
        ctx.t = t_i;
        ctx.tau = tau;
        ctx.chi = model.output_chain(x);
        ctx.u_prev = u_prev;
        ctx.rng = &rng;
        ctx.funnel = &funnel;
        ctx.reference = &ref;
        if (!try_error_variables(t_i, ctx.chi, ref, funnel, ctx.errors)) {
            bool violated = false;
            traj.dense.push_back(make_dense(model, funnel, ref, t_i, i, x, u_prev,
                                            ControlMode::Zero, violated));
            note_violation(true, t_i);
            traj.truncated = true;
            break;
        }

        ControlDecision decision = policy(ctx);
        require(decision.u.size() == model.input_dim && decision.u.allFinite(),
                ErrorCode::InvalidArgument, "policy returned an invalid input");

        traj.sample_times.push_back(t_i);
        traj.inputs.push_back(decision.u);
        traj.modes.push_back(decision.mode);

        const bool full = len >= tau * (1.0 - 1e-12);
        const int steps =
            full ? options.substeps
                 : std::max(1, static_cast<int>(std::ceil(len / h - 1e-9)));
        const auto interval = integrate_interval(model, x, decision.u, t_i, full ? tau : len, steps);

        const bool last = t_end >= options.horizon - end_slack;
        const std::size_t count = interval.samples.size() - (last ? 0 : 1);
        for (std::size_t j = 0; j < count; ++j) {
            bool violated = false;
            const auto& ts = interval.samples[j];
            traj.dense.push_back(
                make_dense(model, funnel, ref, ts.t, i, ts.x, decision.u, decision.mode, violated));
            note_violation(violated, ts.t);
        }
        x = interval.x_end;
        u_prev = decision.u;
    }
    return traj;
}

}  // namespace funnelguard
