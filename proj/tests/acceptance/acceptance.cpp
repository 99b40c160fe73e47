#include "acceptance.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "funnelguard/harness.hpp"
#include "funnelguard/hankel.hpp"
#include "funnelguard/qlearn.hpp"
#include "funnelguard/qp.hpp"
#include "oracles.hpp"

namespace funnelguard::acceptance {

namespace {

using harness::ExperimentConfig;
using harness::ExperimentResult;

// Tolerances and runtime limits of the criteria.
constexpr double kCertRelTol = 0.05;
constexpr double kBetaTarget = 27.55;
constexpr double kTauTarget = 4.8e-3;
constexpr double kTauCombinedTarget = 2.8e-3;
constexpr double kSupUBound = 36.733;
constexpr double kRunLimit = 5.0;
constexpr int kAdversarialSeeds = 100;
constexpr int kLtiSystems = 50;
constexpr double kLemmaTrajectoryTol = 1e-8;
constexpr double kLemmaNonTrajectoryTol = 1e-3;
constexpr int kQps = 20;
constexpr double kQpRelTol = 1e-4;
constexpr int kClosedLoopSeeds = 10;
constexpr double kPeDeadline = 0.5;
constexpr int kDerivativeQuietSeeds = 8;
constexpr double kMdpTol = 1e-3;
constexpr long kMdpSteps = 1000000;
constexpr double kFinalWindow = 5.0;
constexpr double kFinalZohFraction = 0.05;
constexpr double kRk4SelfTol = 1e-10;
constexpr double kRk4OrderLo = 3.6;
constexpr double kRk4OrderHi = 4.4;
constexpr double kPolyTol = 1e-7;
constexpr double kMinFdOrder = 0.9;

struct Outcome {
    bool pass = true;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

bool within(double value, double target, double rel) {
    return std::abs(value - target) <= rel * std::abs(target);
}

std::map<std::string, double> parse_kv(const std::string& text) {
    std::map<std::string, double> kv;
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        try {
            kv[line.substr(0, eq)] = std::stod(line.substr(eq + 1));
        } catch (const std::exception&) {
        }
    }
    return kv;
}

bool inside_width(const Trajectory& traj) {
    for (const auto& d : traj.dense) {
        if (!((d.chi.front() - d.y_ref).norm() < d.width)) return false;
    }
    return true;
}

// ---- 1 ----------------------------------------------------------------------------------------

Outcome certificate_reproduction() {
    const char* argv[] = {"funnelguard", "certify", "--preset", "zoh-sec4"};
    std::ostringstream out, err;
    const int code = harness::cli_main(4, argv, out, err);
    auto kv = parse_kv(out.str());
    const double beta = kv["beta"];
    const double tau = kv["tau_max"];
    const double tau_c = kv["tau_max_combined"];
    Outcome o;
    o.pass = code == 0 && within(beta, kBetaTarget, kCertRelTol) &&
             within(tau, kTauTarget, kCertRelTol) && within(tau_c, kTauCombinedTarget, kCertRelTol);
    o.detail = fmt("beta=%.4f tau_max=%.4e tau_max_combined=%.4e (5%% of 27.55, 4.8e-3, 2.8e-3)",
                   beta, tau, tau_c);
    return o;
}

// ---- 2 ----------------------------------------------------------------------------------------

Outcome zoh_invariance() {
    auto timed = [](const char* name, double& secs) {
        const auto start = std::chrono::steady_clock::now();
        auto r = harness::run_experiment(harness::preset(name));
        secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        return r;
    };
    double t_strict = 0.0;
    double t_relaxed = 0.0;
    const auto strict = timed("zoh-sec4", t_strict);
    const auto relaxed = timed("zoh-sec4-relaxed", t_relaxed);
    Outcome o;
    o.pass = t_strict < kRunLimit && t_relaxed < kRunLimit && !strict.summary.violated &&
             inside_width(strict.trajectory) && strict.summary.sup_u <= kSupUBound &&
             !relaxed.summary.violated && inside_width(relaxed.trajectory);
    o.detail = fmt("sup|e|=%.4f (< 0.15) sup|u|=%.3f (<= 36.733) in %.2f s, relaxed sup|e|=%.4f "
                   "violated=%d in %.2f s (< 5 s each)",
                   strict.summary.sup_e.front() * 0.15, strict.summary.sup_u, t_strict,
                   relaxed.summary.sup_e.front() * 0.15, relaxed.summary.violated ? 1 : 0,
                   t_relaxed);
    return o;
}

// ---- 3 ----------------------------------------------------------------------------------------

Outcome adversarial_safety() {
    std::mt19937_64 rng(3);
    // the preset initial error is the largest for which e_2(0) stays defined; sample below it
    std::uniform_real_distribution<double> y0(-0.09, 0.09);
    int runs = 0;
    int violations = 0;
    double worst = 0.0;
    for (const char* name : {"adversarial-random", "adversarial-constant"}) {
        for (int s = 0; s < kAdversarialSeeds; ++s) {
            ExperimentConfig c = harness::preset(name);
            c.seed = static_cast<std::uint64_t>(s);
            if (s > 0) c.y0 = y0(rng);
            const auto r = harness::run_experiment(c);
            ++runs;
            violations += r.summary.violated ? 1 : 0;
            worst = std::max(worst, r.summary.sup_e.back());
        }
    }
    Outcome o;
    o.pass = violations == 0;
    o.detail = fmt("%d runs, %d violations, worst sup||e_2||=%.4f", runs, violations, worst);
    return o;
}

// ---- 4 ----------------------------------------------------------------------------------------

Outcome fundamental_lemma() {
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<int> order(1, 4);
    std::uniform_int_distribution<int> inputs(1, 2);
    // L >= n + 2 leaves a complement of dimension p L - n >= 2 for the non-trajectories; with a
    // one-dimensional complement a random pair lands within 1e-3 of it about once in 10^3 draws
    std::uniform_int_distribution<int> extra(2, 5);
    double worst_traj = 0.0;
    double worst_non = INFINITY;
    for (int trial = 0; trial < kLtiSystems; ++trial) {
        const int n = order(rng);
        const int m = inputs(rng);
        const int L = n + extra(rng);
        const auto sys = oracle::random_lti(rng, n, m, m);
        const int N = m * (L + n) + L + n + 20;
        const auto data = oracle::simulate(sys, oracle::uniform_signal(rng, 1, n, 1.0)[0],
                                           oracle::uniform_signal(rng, N, m, 1.0));
        const auto hd = deepc::make_hankel_data(data.u, data.y, L, L + n);
        if (!hd.pe_satisfied) return {false, fmt("system %d: data not PE of order L+n", trial)};
        const auto fresh = oracle::simulate(sys, oracle::uniform_signal(rng, 1, n, 2.0)[0],
                                            oracle::uniform_signal(rng, L, m, 2.0));
        worst_traj = std::max(worst_traj, deepc::fundamental_lemma_residual(fresh.u, fresh.y, hd));
        const auto ru = oracle::uniform_signal(rng, L, m, 1.0);
        const auto ry = oracle::uniform_signal(rng, L, m, 1.0);
        worst_non = std::min(worst_non, deepc::fundamental_lemma_residual(ru, ry, hd));
    }
    Outcome o;
    o.pass = worst_traj <= kLemmaTrajectoryTol && worst_non > kLemmaNonTrajectoryTol;
    o.detail = fmt("max trajectory residual=%.2e (<= 1e-8), min non-trajectory residual=%.2e (> 1e-3)",
                   worst_traj, worst_non);
    return o;
}

// ---- 5 ----------------------------------------------------------------------------------------

Outcome qp_oracle() {
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> dim(2, 30);
    double worst = 0.0;
    double worst_infeas = 0.0;
    for (int trial = 0; trial < kQps; ++trial) {
        const auto p = oracle::random_qp(rng, dim(rng), -1);
        const auto ref = oracle::projected_gradient(p);
        const auto r = qp::solve(p.P, p.q, p.A, p.l, p.u);
        if (r.status != qp::Status::Solved) return {false, fmt("QP %d not solved", trial)};
        worst = std::max(worst,
                         std::abs(r.objective - ref.objective) / (1.0 + std::abs(ref.objective)));
        worst_infeas = std::max(worst_infeas, oracle::qp_infeasibility(p, r.x));
    }
    Outcome o;
    o.pass = worst <= kQpRelTol;
    o.detail = fmt("max relative objective gap=%.2e (<= 1e-4), max infeasibility=%.1e", worst,
                   worst_infeas);
    return o;
}

// ---- 6 ----------------------------------------------------------------------------------------

struct DeepcCheck {
    bool ok = true;
    double pe_time = NAN;
    int zoh_after_pe = 0;
};

DeepcCheck check_deepc_run(const ExperimentResult& r) {
    DeepcCheck c;
    const auto& traj = r.trajectory;
    const double lambda = r.config.lambda;
    c.pe_time = r.summary.pe_time.value_or(INFINITY);
    c.ok = r.summary.pe_time && *r.summary.pe_time < kPeDeadline && !r.summary.violated;
    double quiet_from = 0.0;
    for (std::size_t i = 0; i < traj.modes.size(); ++i) {
        if (traj.modes[i] != ControlMode::ZohFeedback) continue;
        quiet_from = traj.sample_times[i] + traj.tau;
        if (traj.sample_times[i] >= c.pe_time) ++c.zoh_after_pe;
    }
    for (const auto& d : traj.dense) {
        if (d.t >= quiet_from && !(d.e_norms.back() < lambda)) c.ok = false;
    }
    return c;
}

Outcome deepc_closed_loop() {
    int ok_plain = 0;
    int ok_deriv = 0;
    int quiet = 0;
    double latest_pe = 0.0;
    for (int s = 0; s < kClosedLoopSeeds; ++s) {
        ExperimentConfig plain = harness::preset("deepc-sec51");
        plain.seed = static_cast<std::uint64_t>(s);
        const auto a = check_deepc_run(harness::run_experiment(plain));
        ok_plain += a.ok ? 1 : 0;
        ExperimentConfig deriv = harness::preset("deepc-sec51-derivative");
        deriv.seed = static_cast<std::uint64_t>(s);
        const auto b = check_deepc_run(harness::run_experiment(deriv));
        ok_deriv += b.ok ? 1 : 0;
        quiet += b.zoh_after_pe == 0 ? 1 : 0;
        latest_pe = std::max({latest_pe, a.pe_time, b.pe_time});
    }
    Outcome o;
    o.pass = ok_plain == kClosedLoopSeeds && ok_deriv == kClosedLoopSeeds &&
             quiet >= kDerivativeQuietSeeds;
    o.detail = fmt("plain %d/10 and derivative %d/10 seeds meet PE < 0.5 s, no violation and "
                   "||e_2|| < lambda after the last ZoH; latest PE %.4f s; derivative seeds "
                   "without ZoH after PE %d/10 (>= 8)",
                   ok_plain, ok_deriv, latest_pe, quiet);
    return o;
}

// ---- 7 ----------------------------------------------------------------------------------------

Outcome qlearning_convergence() {
    const auto mdp = oracle::three_state_mdp();
    const auto q_star = oracle::value_iteration(mdp);
    qlearn::QTable t(mdp.states(), mdp.actions(), qlearn::LearningRate::inverse_visits(),
                     mdp.gamma);
    std::mt19937_64 rng(7);
    int s = 0;
    for (long k = 0; k < kMdpSteps; ++k) {
        const int a = qlearn::select_action(t, s, rng, 1.0);
        const int next = mdp.step(s, a, rng);
        qlearn::q_update(t, s, a, mdp.R[s][a], next);
        s = next;
    }
    const double err = (t.values() - q_star).cwiseAbs().maxCoeff();
    return {err <= kMdpTol, fmt("max|Q - Q*|=%.2e (<= 1e-3) after %ld steps", err, kMdpSteps)};
}

// ---- 8 ----------------------------------------------------------------------------------------

Outcome rl_closed_loop() {
    int clean = 0;
    double worst_fraction = 0.0;
    double worst_u = 0.0;
    for (int s = 0; s < kClosedLoopSeeds; ++s) {
        ExperimentConfig c = harness::preset("rl-sec52");
        c.seed = static_cast<std::uint64_t>(s);
        const auto r = harness::run_experiment(c);
        const auto& traj = r.trajectory;
        const double from = c.horizon - kFinalWindow;
        int total = 0;
        int zoh = 0;
        double sup_u = 0.0;
        for (std::size_t i = 0; i < traj.modes.size(); ++i) {
            if (traj.sample_times[i] < from - 1e-12) continue;
            ++total;
            zoh += traj.modes[i] == ControlMode::ZohFeedback ? 1 : 0;
            sup_u = std::max(sup_u, traj.inputs[i].norm());
        }
        const double fraction = total ? static_cast<double>(zoh) / total : 1.0;
        worst_fraction = std::max(worst_fraction, fraction);
        worst_u = std::max(worst_u, sup_u);
        clean += r.summary.violated ? 0 : 1;
    }
    Outcome o;
    o.pass = clean == kClosedLoopSeeds && worst_fraction <= kFinalZohFraction &&
             worst_u <= harness::preset("rl-sec52").u_max;
    o.detail = fmt("%d/10 seeds inside the funnel, final 5 s: max ZoH fraction=%.4f (<= 0.05), "
                   "max sup||u||=%.3f (<= 10)",
                   clean, worst_fraction, worst_u);
    return o;
}

// ---- 9 ----------------------------------------------------------------------------------------

Outcome rk4_checks(std::string& detail) {
    const MassOnCarParams params;
    const auto plant = mass_on_car(params);
    const Vector x0 = mass_on_car_initial_state(params, -0.0925, 0.6);
    const Vector u = Vector::Constant(1, 20.0);
    const double self =
        (integrate_interval(plant, x0, u, 0.0, kTauTarget, 8).x_end -
         integrate_interval(plant, x0, u, 0.0, kTauTarget, 256).x_end)
            .norm();
    // a long interval keeps the truncation error well above rounding
    const Vector ref = integrate_interval(plant, x0, u, 0.0, 1.0, 4096).x_end;
    const double e1 = (integrate_interval(plant, x0, u, 0.0, 1.0, 8).x_end - ref).norm();
    const double e2 = (integrate_interval(plant, x0, u, 0.0, 1.0, 16).x_end - ref).norm();
    const double order = oracle::observed_order(e1, e2);
    detail = fmt("rk4 8 vs 256 substeps %.1e (<= 1e-10), order %.2f (error ratio %.1f)", self,
                 order, e1 / e2);
    return {self <= kRk4SelfTol && order >= kRk4OrderLo && order <= kRk4OrderHi, {}};
}

bool polynomial_checks(std::string& detail) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> c(-2.0, 2.0);
    double worst = 0.0;
    for (int l = 0; l <= 4; ++l) {
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<double> coeff(static_cast<std::size_t>(l) + 1);
            for (auto& a : coeff) a = c(rng);
            const double tau = 0.05;
            const double t_i = 1.3;
            std::vector<Vector> hist;
            for (int j = l; j >= 0; --j) {
                const double t = t_i - j * tau;
                double v = 0.0;
                for (auto it = coeff.rbegin(); it != coeff.rend(); ++it) v = v * t + *it;
                hist.push_back(Vector::Constant(1, v));
            }
            double expect = coeff.back();
            for (int k = 2; k <= l; ++k) expect *= k;
            const double got = deepc::backward_difference(hist, l, tau)[0];
            worst = std::max(worst, std::abs(got - expect) / (1.0 + std::abs(expect)));
        }
    }
    detail = fmt("backward differences max rel error %.1e (<= 1e-7)", worst);
    return worst <= kPolyTol;
}

/// Max mismatch between forward differences of e_1, e_2 along a run and their implied ODE.
std::pair<double, double> error_ode_mismatch(int substeps) {
    ExperimentConfig c = harness::preset("zoh-sec4");
    c.funnel_family = FunnelSpec::Family::ExpShrink;
    c.width0 = 0.5;
    c.width_inf = 0.15;
    c.decay = 2.0;
    c.tau.reset();
    c.beta.reset();
    c.substeps = substeps;
    c.horizon = 0.5;
    const auto setup = harness::build_setup(c);
    const auto r = harness::run_experiment(c);
    const auto& dense = r.trajectory.dense;
    const auto& funnel = setup.funnel;
    double m1 = 0.0;
    double m2 = 0.0;
    for (std::size_t i = 1; i + 1 < dense.size(); ++i) {
        const auto& a = dense[i - 1];
        const auto& b = dense[i];
        const auto& z = dense[i + 1];
        // the input is smooth only inside one hold interval
        if (a.interval != b.interval || z.interval != b.interval) continue;
        // forward differences: the mismatch is first order in the dense spacing
        const double h = z.t - b.t;
        const double t = b.t;
        const double e1 = b.e[0][0];
        const double e2 = b.e[1][0];
        const double lg = funnel.phi_dot(t) / funnel.phi(t);
        const double al = alpha(e1 * e1);
        const double de1 = (z.e[0][0] - e1) / h;
        const double rhs1 = lg * e1 + e2 - al * e1;
        const auto [f, g] = setup.plant.affine_form(t, b.x);
        const double ydd = f[0] + g(0, 0) * b.u[0];
        const double yref_dd = setup.reference.evaluate(t)[2][0];
        const double rhs2 = lg * (e2 - al * e1) + funnel.phi(t) * (ydd - yref_dd) +
                            2.0 * alpha_prime(e1 * e1) * e1 * rhs1 * e1 + al * rhs1;
        const double de2 = (z.e[1][0] - e2) / h;
        m1 = std::max(m1, std::abs(de1 - rhs1));
        m2 = std::max(m2, std::abs(de2 - rhs2));
    }
    return {m1, m2};
}

Outcome numerical_self_checks() {
    std::string rk, poly;
    const bool rk_ok = rk4_checks(rk).pass;
    const bool poly_ok = polynomial_checks(poly);
    const auto coarse = error_ode_mismatch(16);
    const auto fine = error_ode_mismatch(32);
    const double order1 = oracle::observed_order(coarse.first, fine.first);
    const double order2 = oracle::observed_order(coarse.second, fine.second);
    const bool fd_ok = order1 >= kMinFdOrder && order2 >= kMinFdOrder;
    Outcome o;
    o.pass = rk_ok && poly_ok && fd_ok;
    o.detail = rk + "; " + poly +
               fmt("; e_k ODE mismatch %.1e/%.1e -> %.1e/%.1e, order %.2f/%.2f (>= 0.9)",
                   coarse.first, coarse.second, fine.first, fine.second, order1, order2);
    return o;
}

struct Criterion {
    int id;
    const char* name;
    double limit_s;
    std::function<Outcome()> run;
};

}  // namespace

int run_all(std::ostream& out) {
    const std::vector<Criterion> criteria = {
        {1, "certificate reproduction", 1.0, certificate_reproduction},
        {2, "ZoH funnel invariance", 10.0, zoh_invariance},
        {3, "safety under adversarial delegates", 120.0, adversarial_safety},
        {4, "fundamental lemma oracle", 30.0, fundamental_lemma},
        {5, "QP solver vs oracle", 60.0, qp_oracle},
        {6, "DeePC closed loop", 300.0, deepc_closed_loop},
        {7, "Q-learning convergence", 30.0, qlearning_convergence},
        {8, "RL closed loop", 180.0, rl_closed_loop},
        {9, "numerical self-checks", 60.0, numerical_self_checks},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const bool pass = o.pass && secs < c.limit_s;
        failed += pass ? 0 : 1;
        out << fmt("criterion %d %s: %s  %s [%.2f s, limit %.0f s]", c.id, c.name,
                   pass ? "PASS" : "FAIL", o.detail.c_str(), secs, c.limit_s)
            << std::endl;
    }
    return failed == 0 ? 0 : 1;
}

}  // namespace funnelguard::acceptance
