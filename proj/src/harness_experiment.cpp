#include <algorithm>
#include <cmath>
#include <limits>

#include "funnelguard/error.hpp"
#include "funnelguard/harness.hpp"

namespace funnelguard::harness {

namespace {

void check(bool ok, const char* field, const std::string& message) {
    if (!ok) throw ConfigError(field, message);
}

void validate(const ExperimentConfig& c) {
    check(c.horizon > 0.0, "reference.horizon", "must be positive");
    check(c.lambda > 0.0 && c.lambda < 1.0, "controller.lambda", "must lie in (0,1)");
    check(c.u_max > 0.0, "controller.u_max", "must be positive");
    check(c.beta_margin >= 0.0, "controller.beta_margin", "must be non-negative");
    check(!c.beta || *c.beta > 0.0, "controller.beta", "must be positive");
    check(!c.tau || *c.tau > 0.0, "controller.tau", "must be positive");
    check(c.move_blocking >= 1, "controller.move_blocking", "must be >= 1");
    check(c.substeps >= 1, "sim.substeps", "must be >= 1");
    check(c.width0 > 0.0, "funnel.width", "must be positive");
    if (c.funnel_family == FunnelSpec::Family::ExpShrink) {
        check(c.width_inf > 0.0 && c.width_inf <= c.width0, "funnel.width_inf",
              "must lie in (0, width]");
        check(c.decay > 0.0, "funnel.decay", "must be positive");
    }
    check(c.bounds.f_max >= 0.0, "bounds.f_max", "must be non-negative");
    check(c.bounds.g_min > 0.0, "bounds.g_min", "must be positive");
    check(c.bounds.g_max >= c.bounds.g_min, "bounds.g_max", "must be >= g_min");
    check(c.bounds.disturbance >= 0.0, "bounds.disturbance", "must be non-negative");
    check(c.integrator_dim >= 1, "plant.dim", "must be >= 1");
    check(c.deepc.horizon >= 1, "deepc.horizon", "must be >= 1");
    check(c.deepc.past >= 1, "deepc.past", "must be >= 1");
    check(c.deepc.min_horizon >= 1 && c.deepc.min_horizon <= c.deepc.horizon,
          "deepc.min_horizon", "must lie in [1, horizon]");
    check(c.deepc.growth_interval >= 1, "deepc.growth_interval", "must be >= 1");
    check(c.deepc.q_weight > 0.0, "deepc.q", "must be positive");
    check(c.deepc.r_weight > 0.0, "deepc.r", "must be positive");
    check(c.deepc.lambda_nu >= 0.0, "deepc.lambda_nu", "must be non-negative");
    check(!c.deepc.lambda_sigma || *c.deepc.lambda_sigma >= 0.0, "deepc.lambda_sigma",
          "must be non-negative");
    check(c.deepc.rank_tol > 0.0 && c.deepc.rank_tol < 1.0, "deepc.rank_tol", "must lie in (0,1)");
    check(c.deepc.qp.max_iter >= 1, "deepc.qp_max_iter", "must be >= 1");
    check(c.deepc.qp.eps_abs > 0.0, "deepc.qp_eps", "must be positive");
    for (std::size_t i = 0; i < c.deepc.mu.size(); ++i) {
        check(c.deepc.mu[i] >= 0.0 && (i == 0 || c.deepc.mu[i] <= c.deepc.mu[i - 1]), "deepc.mu",
              "must be non-negative and non-increasing");
    }
    check(c.qlearn.state_bins >= 2, "qlearn.state_bins", "must be >= 2");
    check(c.qlearn.action_bins >= 2, "qlearn.action_bins", "must be >= 2");
    check(c.qlearn.gamma > 0.0 && c.qlearn.gamma < 1.0, "qlearn.gamma", "must lie in (0,1)");
    check(c.qlearn.rate.kind == qlearn::LearningRate::Kind::InverseVisits ||
              (c.qlearn.rate.value >= 0.0 && c.qlearn.rate.value <= 1.0),
          "qlearn.alpha", "must lie in [0,1] or be inverse_visits");
    const auto& e = c.qlearn.epsilon;
    check(e.eps0 >= 0.0 && e.eps0 <= 1.0, "qlearn.eps0", "must lie in [0,1]");
    check(e.eps_min >= 0.0 && e.eps_min <= 1.0, "qlearn.eps_min", "must lie in [0,1]");
    check(e.decay >= 0.0 && e.decay <= 1.0, "qlearn.eps_decay", "must lie in [0,1]");
    check(e.period > 0.0, "qlearn.eps_period", "must be positive");
    check(e.initial_window >= 0.0, "qlearn.eps_window", "must be non-negative");
    if (c.mode == Mode::CombinedSampledFunnel) {
        check(c.u_max >= sampled_funnel_u_max(c.lambda) * (1.0 - 1e-12), "controller.u_max",
              "must be at least lambda / (1 - lambda^2) for the sampled funnel delegate");
    }
}

}  // namespace

Setup build_setup(const ExperimentConfig& c) {
    validate(c);
    PlantModel plant;
    int dim = 1;
    try {
        if (c.plant_model == "mass_on_car") {
            PlantModel::Disturbance d;
            if (c.disturbance_amplitude != 0.0) {
                const double a = c.disturbance_amplitude;
                const double w = c.disturbance_omega;
                d = [a, w](double t) { return Vector::Constant(1, a * std::sin(w * t)); };
            }
            plant = mass_on_car(c.mass_on_car, d, std::abs(c.disturbance_amplitude));
        } else {
            dim = c.integrator_dim;
            plant = integrator_chain(dim);
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& ex) {
        throw ConfigError("plant", ex.what());
    }

    FunnelSpec funnel = c.funnel_family == FunnelSpec::Family::Constant
                            ? FunnelSpec::constant(c.width0)
                            : FunnelSpec::exp_shrink(c.width0, c.width_inf, c.decay);
    ReferenceSpec ref =
        ReferenceSpec::sinusoid(c.ref_amplitude, c.ref_omega, plant.relative_degree, dim);

    Vector x0;
    if (c.plant_model == "mass_on_car") {
        const double ydot0 = c.ydot0 ? *c.ydot0 : ref.evaluate(0.0)[1][0];
        x0 = mass_on_car_initial_state(c.mass_on_car, c.y0, ydot0);
    } else {
        x0 = Vector::Constant(dim, c.y0);
    }
    ErrorState e0;
    if (!try_error_variables(0.0, plant.output_chain(x0), ref, funnel, e0)) {
        throw ConfigError("plant.y0", "initial error variables are undefined (||e_k(0)|| >= 1)");
    }
    std::vector<double> norms;
    for (const auto& e : e0.e) norms.push_back(e.norm());
    if (!(norms.back() <= 1.0)) {
        throw ConfigError("plant.y0", "initial ||e_r(0)|| exceeds 1");
    }
    if (c.disturbance_amplitude != 0.0 && !(std::abs(c.disturbance_amplitude) <= c.bounds.disturbance)) {
        throw ConfigError("bounds.disturbance", "must bound |plant.disturbance_amplitude|");
    }
    return Setup{std::move(plant), funnel, std::move(ref), std::move(x0), std::move(norms)};
}

Resolved resolve(const ExperimentConfig& c, const Setup& setup, bool override_tau) {
    Resolved r;
    const std::span<const double> e0(setup.e0_norms.data(), setup.e0_norms.size() - 1);
    try {
        r.certificate = certificate(setup.funnel, setup.reference, c.bounds, e0, c.lambda, c.u_max,
                                    CertificateOptions{c.beta_margin});
    } catch (const Error& ex) {
        throw ConfigError("plant.y0", ex.what());
    }
    const auto& cert = r.certificate;
    r.u_max = c.u_max;
    r.beta_auto = !c.beta;
    r.beta = c.beta ? *c.beta : cert.beta;
    const bool combined = c.mode != Mode::Zoh;
    r.tau_bound = combined ? std::min(tau_bound(cert, r.beta, c.u_max), cert.tau_max_combined)
                           : tau_bound(cert, r.beta, 0.0);
    r.tau_auto = !c.tau;
    r.tau = c.tau ? *c.tau : r.tau_bound;

    const bool beta_ok = r.beta > beta_infimum(cert);
    const bool tau_ok = r.tau <= r.tau_bound * (1.0 + 1e-12);
    r.gate_ok = beta_ok && tau_ok;
    if (!beta_ok) {
        r.gate_message = "beta " + std::to_string(r.beta) + " does not exceed the infimum " +
                         std::to_string(beta_infimum(cert));
    } else if (!tau_ok) {
        r.gate_message = "tau " + std::to_string(r.tau) + " exceeds the bound " +
                         std::to_string(r.tau_bound);
    }
    if (c.certified && !beta_ok) throw ConfigError("controller.beta", r.gate_message);
    if (c.certified && !tau_ok) {
        if (!override_tau) throw ConfigError("controller.tau", r.gate_message);
        r.override_tau = true;
    }
    return r;
}

namespace {

struct Built {
    Policy policy;
    std::shared_ptr<deepc::DeepcController> deepc;
    std::shared_ptr<qlearn::QLearnDelegate> qlearn;
};

Built build_policy(const ExperimentConfig& c, const Resolved& r, int dim, int relative_degree) {
    Built b;
    const ZohPolicy zoh(c.lambda, r.beta);
    if (c.mode == Mode::Zoh) {
        b.policy = make_zoh_policy(zoh);
        return b;
    }
    CombinedPolicy cp;
    cp.zoh = zoh;
    cp.u_max = c.u_max;
    cp.move_blocking = c.move_blocking;
    switch (c.mode) {
        case Mode::CombinedDeepc: {
            deepc::DeepcConfig dc = c.deepc;
            dc.u_max = c.u_max;
            b.deepc = std::make_shared<deepc::DeepcController>(dc, dim, relative_degree);
            cp.delegate = std::make_shared<deepc::DeepcDelegate>(b.deepc);
            break;
        }
        case Mode::CombinedQlearn: {
            qlearn::QLearnConfig qc = c.qlearn;
            qc.lambda = c.lambda;
            qc.u_max = c.u_max;
            b.qlearn = std::make_shared<qlearn::QLearnDelegate>(qc, dim);
            cp.delegate = b.qlearn;
            break;
        }
        case Mode::CombinedSampledFunnel:
            cp.delegate = std::make_shared<SampledFunnelDelegate>();
            break;
        case Mode::CombinedAdversarial:
            if (c.adversary == Adversary::Constant) {
                cp.delegate = std::make_shared<ConstantDelegate>(
                    Vector::Constant(dim, c.u_max / std::sqrt(static_cast<double>(dim))));
            } else {
                cp.delegate = std::make_shared<RandomSignDelegate>(dim, c.u_max);
            }
            break;
        case Mode::Zoh:
            break;
    }
    b.policy = make_combined_policy(std::move(cp));
    return b;
}

}  // namespace

Summary summarize(const Trajectory& traj, const PlantModel* plant) {
    Summary s;
    s.sup_e.assign(static_cast<std::size_t>(traj.relative_degree), 0.0);
    for (const auto& d : traj.dense) {
        for (std::size_t k = 0; k < d.e_norms.size(); ++k) {
            if (!std::isnan(d.e_norms[k])) s.sup_e[k] = std::max(s.sup_e[k], d.e_norms[k]);
        }
    }
    s.violated = traj.funnel_violated;
    s.first_violation_time = traj.first_violation_time;
    s.truncated = traj.truncated;
    s.intervals = traj.inputs.size();
    for (std::size_t i = 0; i < traj.inputs.size(); ++i) {
        s.sup_u = std::max(s.sup_u, traj.inputs[i].norm());
        s.mode_fraction[static_cast<std::size_t>(traj.modes[i])] += 1.0;
        if (traj.modes[i] == ControlMode::ZohFeedback) {
            ++s.zoh_activations;
            s.last_zoh_time = traj.sample_times[i];
        }
    }
    if (s.intervals > 0) {
        for (double& f : s.mode_fraction) f /= static_cast<double>(s.intervals);
    }
    if (plant != nullptr && plant->affine_form) {
        double fmax = 0.0;
        double gmin = std::numeric_limits<double>::infinity();
        double gmax = 0.0;
        for (const auto& d : traj.dense) {
            const auto [f, g] = plant->affine_form(d.t, d.x);
            fmax = std::max(fmax, f.norm());
            const Eigen::JacobiSVD<Matrix> svd(g);
            gmin = std::min(gmin, svd.singularValues().minCoeff());
            gmax = std::max(gmax, svd.singularValues().maxCoeff());
        }
        if (!traj.dense.empty()) {
            s.observed_f_max = fmax;
            s.observed_g_min = gmin;
            s.observed_g_max = gmax;
        }
    }
    return s;
}

ExperimentResult run_experiment(const ExperimentConfig& config, const RunOptions& options) {
    ExperimentResult out;
    out.config = config;
    const Setup setup = build_setup(config);
    out.resolved = resolve(config, setup, options.override_tau);

    Built built = build_policy(config, out.resolved, setup.plant.input_dim,
                               setup.plant.relative_degree);
    ClosedLoopOptions loop;
    loop.tau = out.resolved.tau;
    loop.horizon = config.horizon;
    loop.substeps = config.substeps;
    loop.seed = config.seed;
    out.trajectory =
        run_closed_loop(setup.plant, setup.funnel, setup.reference, built.policy, setup.x0, loop);
    out.summary = summarize(out.trajectory, &setup.plant);

    if (built.deepc) {
        out.summary.pe_time = built.deepc->pe_time();
        out.summary.deepc_solves = built.deepc->solves();
        out.summary.deepc_fallbacks = built.deepc->fallbacks();
    }
    if (built.qlearn) {
        const auto seconds = static_cast<std::size_t>(std::ceil(config.horizon));
        out.summary.reward_per_second.assign(std::max<std::size_t>(seconds, 1), 0.0);
        for (const auto& rs : built.qlearn->rewards()) {
            auto bucket = static_cast<std::size_t>(std::floor(rs.t));
            bucket = std::min(bucket, out.summary.reward_per_second.size() - 1);
            out.summary.reward_per_second[bucket] += rs.reward;
        }
        out.qtable = built.qlearn->table();
    }
    return out;
}

}  // namespace funnelguard::harness
