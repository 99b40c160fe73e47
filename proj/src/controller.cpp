#include "funnelguard/controller.hpp"

#include <cmath>
#include <string>

#include "funnelguard/error.hpp"

namespace funnelguard {

ZohPolicy::ZohPolicy(double lambda_, double beta_) : lambda(lambda_), beta(beta_) {
    require(lambda > 0.0 && lambda < 1.0, ErrorCode::InvalidArgument, "lambda must lie in (0,1)");
    require(std::isfinite(beta) && beta > 0.0, ErrorCode::InvalidArgument, "beta must be positive");
}

Vector zoh_control(const Vector& e_r, const ZohPolicy& policy) {
    const double n2 = e_r.squaredNorm();
    if (std::sqrt(n2) < policy.lambda) return Vector::Zero(e_r.size());
    return (-policy.beta / n2) * e_r;
}

ControlDecision combined_control(const Vector& e_r, const CombinedPolicy& policy,
                                 const SampleContext& ctx) {
    if (!(e_r.norm() < policy.zoh.lambda)) {
        return {zoh_control(e_r, policy.zoh), ControlMode::ZohFeedback};
    }
    require(static_cast<bool>(policy.delegate), ErrorCode::InvalidArgument,
            "combined policy has no delegate");
    DelegateAction action = policy.delegate->act(ctx);
    require(action.u.size() == e_r.size() && action.u.allFinite(), ErrorCode::InvalidArgument,
            "delegate returned an invalid input");
    const double norm = action.u.norm();
    if (norm > policy.u_max + kDelegateBoundSlack) {
        throw Error(ErrorCode::DelegateExceedsBound,
                    "||u_data|| = " + std::to_string(norm) + " exceeds u_max = " +
                        std::to_string(policy.u_max));
    }
    return {std::move(action.u), action.mode};
}

Vector sampled_funnel_delegate(const Vector& e_r) { return -alpha(e_r.squaredNorm()) * e_r; }

double sampled_funnel_u_max(double lambda) { return lambda / (1.0 - lambda * lambda); }

DelegateAction SampledFunnelDelegate::act(const SampleContext& ctx) {
    return {sampled_funnel_delegate(ctx.e_r()), ControlMode::SafeFeedback};
}

DelegateAction RandomSignDelegate::act(const SampleContext& ctx) {
    require(ctx.rng != nullptr, ErrorCode::InvalidArgument, "random delegate needs an rng");
    std::bernoulli_distribution coin(0.5);
    Vector u(dim_);
    // keep ||u|| <= u_max for dim > 1
    const double mag = u_max_ / std::sqrt(static_cast<double>(dim_));
    for (int i = 0; i < dim_; ++i) u[i] = coin(*ctx.rng) ? mag : -mag;
    return {u, ControlMode::Random};
}

Policy make_zoh_policy(const ZohPolicy& policy) {
    return [policy](const SampleContext& ctx) {
        Vector u = zoh_control(ctx.e_r(), policy);
        const bool active = !(ctx.e_r().norm() < policy.lambda);
        return ControlDecision{std::move(u), active ? ControlMode::ZohFeedback : ControlMode::Zero};
    };
}

Policy make_combined_policy(CombinedPolicy policy) {
    require(static_cast<bool>(policy.delegate), ErrorCode::InvalidArgument,
            "combined policy has no delegate");
    require(policy.move_blocking >= 1, ErrorCode::InvalidArgument, "move_blocking must be >= 1");
    struct Hold {
        int remaining = 0;
        ControlDecision last;
    };
    auto hold = std::make_shared<Hold>();
    return [policy = std::move(policy), hold](const SampleContext& ctx) {
        policy.delegate->observe(ctx);
        const Vector& e_r = ctx.e_r();
        const bool safe = e_r.norm() < policy.zoh.lambda;
        if (safe && hold->remaining > 0) {
            --hold->remaining;
            return hold->last;
        }
        ControlDecision d = combined_control(e_r, policy, ctx);
        if (safe) {
            hold->remaining = policy.move_blocking - 1;
            hold->last = d;
        } else {
            hold->remaining = 0;
        }
        return d;
    };
}

}  // namespace funnelguard
