#pragma once

#include <memory>
#include <utility>

#include "funnelguard/plant.hpp"

namespace funnelguard {

/// Sampled-data feedback u = -beta e_r / ||e_r||^2 when ||e_r|| >= lambda, else 0.
struct ZohPolicy {
    double lambda = 0.75;
    double beta = 1.0;

    ZohPolicy() = default;
    ZohPolicy(double lambda_, double beta_);
};

[[nodiscard]] Vector zoh_control(const Vector& e_r, const ZohPolicy& policy);

/// What the learning component proposes in the safe region.
struct DelegateAction {
    Vector u;
    ControlMode mode = ControlMode::SafeFeedback;
};

/// Safe-region controller. `observe` runs at every sampling instant (before the branch
/// decision) so that learners can record data; `act` runs only when ||e_r|| < lambda.
class Delegate {
public:
    virtual ~Delegate() = default;
    virtual void observe(const SampleContext&) {}
    virtual DelegateAction act(const SampleContext& ctx) = 0;
};

struct CombinedPolicy {
    ZohPolicy zoh;
    std::shared_ptr<Delegate> delegate;
    double u_max = 0.0;
    /// Re-query the delegate only every `move_blocking` consecutive safe intervals.
    int move_blocking = 1;
};

/// Absolute slack allowed on ||u_data|| <= u_max before DelegateExceedsBound.
inline constexpr double kDelegateBoundSlack = 1e-12;

/// Safety check and branch selection for one sampling instant. The threshold
/// ||e_r|| == lambda takes the ZoH branch.
[[nodiscard]] ControlDecision combined_control(const Vector& e_r, const CombinedPolicy& policy,
                                               const SampleContext& ctx);

/// Sample-and-hold funnel law u = -alpha(||e_r||^2) e_r, feasible with u_max = lambda/(1-lambda^2).
[[nodiscard]] Vector sampled_funnel_delegate(const Vector& e_r);
[[nodiscard]] double sampled_funnel_u_max(double lambda);

/// Pure ZoH law wrapped as a closed-loop policy; the quiet branch reports ControlMode::Zero.
[[nodiscard]] Policy make_zoh_policy(const ZohPolicy& policy);

/// Combined law as a closed-loop policy. Keeps move-blocking state, hence one instance per run.
[[nodiscard]] Policy make_combined_policy(CombinedPolicy policy);

class SampledFunnelDelegate final : public Delegate {
public:
    DelegateAction act(const SampleContext& ctx) override;
};

/// Adversarial u_data that always pushes with +u_max in every component direction.
class ConstantDelegate final : public Delegate {
public:
    explicit ConstantDelegate(Vector u) : u_(std::move(u)) {}
    DelegateAction act(const SampleContext&) override { return {u_, ControlMode::SafeFeedback}; }

private:
    Vector u_;
};

/// Adversarial u_data drawn uniformly from {-u_max, +u_max} (per scalar input) every call.
class RandomSignDelegate final : public Delegate {
public:
    RandomSignDelegate(int dim, double u_max) : dim_(dim), u_max_(u_max) {}
    DelegateAction act(const SampleContext& ctx) override;

private:
    int dim_;
    double u_max_;
};

}  // namespace funnelguard
