#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string_view>
#include <vector>

#include "funnelguard/funnel.hpp"

namespace funnelguard {

/// Explicit state-space realization of y^{(r)} = f(d, T(chi)) + g(d, T(chi)) u.
struct PlantModel {
    /// (t, x, u, d) -> dx/dt
    using Rhs = std::function<Vector(double, const Vector&, const Vector&, const Vector&)>;
    /// x -> (y, y', ..., y^{(r-1)})
    using OutputChain = std::function<std::vector<Vector>(const Vector&)>;
    using Disturbance = std::function<Vector(double)>;
    /// Optional input-affine form of y^{(r)}: (t, x) -> (f, g). Used for diagnostics only.
    using AffineForm = std::function<std::pair<Vector, Matrix>(double, const Vector&)>;

    int state_dim = 0;
    int input_dim = 0;
    int relative_degree = 0;
    int disturbance_dim = 0;
    Rhs rhs;
    OutputChain output_chain;
    Disturbance disturbance;
    double disturbance_bound = 0.0;
    AffineForm affine_form;

    /// Checks dimensions and samples ||d(t)|| <= D on [0, check_horizon].
    void validate(double check_horizon = 100.0, int check_points = 10001) const;

    [[nodiscard]] Vector derivative(double t, const Vector& x, const Vector& u) const;
};

struct MassOnCarParams {
    double m1 = 1.0;
    double m2 = 2.0;
    double theta = 0.7853981633974483;  // pi/4
    double k = 1.0;
    double damping = 1.0;

    void validate() const;
};

/// Car of mass m1 carrying a ramp with a spring-damper coupled mass m2.
/// State x = (z, s, z', s'), output y = z + cos(theta) s, relative degree 2.
/// The optional disturbance is an additive force on the car.
[[nodiscard]] PlantModel mass_on_car(const MassOnCarParams& params,
                                     PlantModel::Disturbance disturbance = {},
                                     double disturbance_bound = 0.0);

/// State with the given output/velocity and the ramp mass at rest relative to the car.
[[nodiscard]] Vector mass_on_car_initial_state(const MassOnCarParams& params, double y0,
                                               double ydot0);

/// Scalar (or vector) integrator x' = u with output chain (x); relative degree 1.
[[nodiscard]] PlantModel integrator_chain(int dim = 1);

struct TimedState {
    double t;
    Vector x;
};

struct IntervalResult {
    Vector x_end;
    std::vector<TimedState> samples;  ///< substeps + 1 samples, both endpoints included
};

/// Classical fixed-step RK4 over [t0, t0 + tau] with the input held constant.
[[nodiscard]] IntervalResult integrate_interval(const PlantModel& model, const Vector& x0,
                                                const Vector& u, double t0, double tau,
                                                int substeps);

enum class ControlMode : std::uint8_t { SafeFeedback, ZohFeedback, Zero, Random };

[[nodiscard]] std::string_view to_string(ControlMode mode) noexcept;

/// Everything a policy sees at a sampling instant t_i.
struct SampleContext {
    std::size_t index = 0;
    double t = 0.0;
    double tau = 0.0;
    std::vector<Vector> chi;  ///< (y, y', ..., y^{(r-1)}) at t_i
    ErrorState errors;
    Vector u_prev;            ///< input held over the previous interval (zero at i = 0)
    std::mt19937_64* rng = nullptr;
    const FunnelSpec* funnel = nullptr;
    const ReferenceSpec* reference = nullptr;

    [[nodiscard]] const Vector& y() const { return chi.front(); }
    [[nodiscard]] const Vector& e_r() const { return errors.last(); }
};

struct ControlDecision {
    Vector u;
    ControlMode mode = ControlMode::Zero;
};

using Policy = std::function<ControlDecision(const SampleContext&)>;

struct DenseSample {
    double t = 0.0;
    std::size_t interval = 0;
    Vector x;
    std::vector<Vector> chi;
    Vector y_ref;
    double width = 0.0;
    std::vector<Vector> e;        ///< e_1 ... e_r (only the defined prefix when the chain broke)
    std::vector<double> e_norms;  ///< r entries, NaN where undefined
    Vector u;
    ControlMode mode = ControlMode::Zero;
};

struct Trajectory {
    int output_dim = 1;
    int input_dim = 1;
    int relative_degree = 1;
    double tau = 0.0;
    std::vector<double> sample_times;
    std::vector<Vector> inputs;      ///< held input per interval
    std::vector<ControlMode> modes;  ///< mode per interval
    std::vector<DenseSample> dense;

    bool funnel_violated = false;
    std::optional<double> first_violation_time;
    bool truncated = false;  ///< stopped early because e_r was undefined at a sampling instant
};

struct ClosedLoopOptions {
    double tau = 0.0;
    double horizon = 0.0;
    int substeps = 16;
    std::uint64_t seed = 0;
};

/// Samples at t_i = i tau, evaluates the error variables, queries the policy and holds its
/// output over [t_i, t_i + tau). The final interval is shortened to end at the horizon.
/// Leaving D_t (||e_k|| >= 1 for k < r or ||e_r|| > 1) at any dense sample is recorded as a
/// funnel violation rather than raised.
[[nodiscard]] Trajectory run_closed_loop(const PlantModel& model, const FunnelSpec& funnel,
                                         const ReferenceSpec& ref, const Policy& policy,
                                         const Vector& x0, const ClosedLoopOptions& options);

}  // namespace funnelguard
