#pragma once

#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "funnelguard/controller.hpp"
#include "funnelguard/hankel.hpp"
#include "funnelguard/qp.hpp"

namespace funnelguard::deepc {

/// Weighted least-squares OCP over the Hankel column space, decision variable nu.
struct OcpProblem {
    std::shared_ptr<const HankelData> hankel;
    int horizon = 0;
    int past = 0;
    /// Most recent `past` samples, oldest first.
    std::vector<Vector> u_past;
    std::vector<Vector> y_past;
    /// reference[f][l] = l-th derivative of y_ref at the f-th future sampling instant.
    std::vector<std::vector<Vector>> reference;
    Matrix Q;
    Matrix R;
    double lambda_nu = 1e-6;
    /// Slack weight; nullopt waives the slack (sigma = 0, past window imposed exactly).
    std::optional<double> lambda_sigma;
    double u_max = 10.0;
    /// Non-empty selects the derivative-weighted tracking cost with weights mu_0..mu_{r-1}.
    std::vector<double> mu;
    /// phi at the future sampling instants (derivative cost only).
    std::vector<double> phi;
    double tau = 0.0;
};

/// 1/2 nu'P nu + q'nu + constant equals the OCP cost; rows A nu within [l, u].
struct CondensedQp {
    Matrix P;
    Vector q;
    double constant = 0.0;
    Matrix A;
    Vector l;
    Vector u;
    /// Rows [0, box_rows) of A are the input constraints.
    int box_rows = 0;
};

struct OcpSolution {
    std::vector<Vector> u_plan;
    std::vector<Vector> y_pred;
    Vector nu;
    Vector sigma;
    double objective = 0.0;
    qp::Result stats;
};

/// Per-component input bound: u_max for m = 1, u_max/sqrt(m) otherwise (inner box of the ball).
[[nodiscard]] double input_box(double u_max, int m);

[[nodiscard]] CondensedQp build_ocp(const OcpProblem& problem);
[[nodiscard]] OcpSolution solve_ocp(const OcpProblem& problem, const qp::Settings& settings = {},
                                    const Vector* warm_nu = nullptr);

enum class PeOrder { LPlusN, LPlus2N };

struct DeepcConfig {
    int horizon = 20;
    int past = 4;
    PeOrder pe_order = PeOrder::LPlus2N;
    double rank_tol = kDefaultRankTol;
    double q_weight = 1e3;
    double r_weight = 1e-4;
    double lambda_nu = 1e-6;
    std::optional<double> lambda_sigma;
    double u_max = 10.0;
    bool derivative_cost = false;
    /// Empty: mu_l = 10^(-2 l) / phi(0).
    std::vector<double> mu;
    /// Grow the horizon from `min_horizon` up to `horizon` by one step at a time, at most
    /// once per `growth_interval` recorded samples and only when the data allows.
    bool adaptive_horizon = false;
    int min_horizon = 1;
    int growth_interval = 1;
    /// Rebuild the Hankels from all data at every step instead of freezing them.
    bool rebuild = false;
    qp::Settings qp;
    std::string dump_dir;
};

inline constexpr double kDefaultLambdaSigma = 1e5;

/// DeePC state: data collection, PE test, Hankel storage and OCP feedback.
class DeepcController {
public:
    DeepcController(DeepcConfig config, int input_dim, int relative_degree);

    /// Appends the sample (u over the interval ending at t, y(t)) and updates the PE state.
    void record(const Vector& u, const Vector& y, double t);

    /// Input for the interval starting at t: random excitation before PE, OCP feedback after.
    [[nodiscard]] DelegateAction act(double t, double tau, const FunnelSpec& funnel,
                                     const ReferenceSpec& reference, std::mt19937_64& rng);

    [[nodiscard]] bool pe() const noexcept { return hankel_ != nullptr; }
    [[nodiscard]] std::optional<double> pe_time() const noexcept { return pe_time_; }
    [[nodiscard]] int horizon() const noexcept { return horizon_; }
    [[nodiscard]] int solves() const noexcept { return solves_; }
    [[nodiscard]] int fallbacks() const noexcept { return fallbacks_; }
    [[nodiscard]] const std::optional<OcpSolution>& last_solution() const noexcept {
        return last_;
    }
    [[nodiscard]] std::shared_ptr<const HankelData> hankel() const noexcept { return hankel_; }
    [[nodiscard]] const DeepcConfig& config() const noexcept { return config_; }

private:
    int pe_extra() const;
    bool try_build(int horizon);
    void dump_hankel() const;
    void log_solve(double t, const OcpSolution& sol, bool fallback) const;

    DeepcConfig config_;
    int m_;
    int r_;
    std::vector<Vector> u_hist_;
    std::vector<Vector> y_hist_;
    std::shared_ptr<const HankelData> hankel_;
    std::optional<double> pe_time_;
    int horizon_ = 0;
    int solves_ = 0;
    int fallbacks_ = 0;
    int builds_ = 0;
    std::size_t grown_at_ = 0;
    std::optional<OcpSolution> last_;
};

/// One DeePC step: record the sample, then return the delegate input when
/// ||e_r|| < lambda and nullopt when the ZoH branch is in charge.
[[nodiscard]] std::optional<DelegateAction> deepc_policy_step(DeepcController& controller,
                                                              const SampleContext& ctx,
                                                              double lambda);

/// Adapter for the combined policy. Samples from t_1 onwards are recorded as data.
class DeepcDelegate final : public Delegate {
public:
    explicit DeepcDelegate(std::shared_ptr<DeepcController> controller)
        : controller_(std::move(controller)) {}
    void observe(const SampleContext& ctx) override;
    DelegateAction act(const SampleContext& ctx) override;

    [[nodiscard]] const DeepcController& controller() const noexcept { return *controller_; }

private:
    std::shared_ptr<DeepcController> controller_;
};

}  // namespace funnelguard::deepc
