#include <doctest.h>

#include <cmath>
#include <random>

#include "funnelguard/controller.hpp"
#include "funnelguard/error.hpp"

using namespace funnelguard;

namespace {

Vector scalar(double v) { return Vector::Constant(1, v); }

SampleContext context_for(const Vector& e_r, std::mt19937_64* rng = nullptr) {
    SampleContext ctx;
    ctx.errors.e = {e_r};
    ctx.u_prev = Vector::Zero(e_r.size());
    ctx.rng = rng;
    return ctx;
}

/// Delegate returning a fixed value and counting its calls.
class Scripted final : public Delegate {
public:
    explicit Scripted(Vector u) : u_(std::move(u)) {}
    void observe(const SampleContext&) override { ++observed; }
    DelegateAction act(const SampleContext&) override {
        ++acted;
        return {u_ * acted, ControlMode::SafeFeedback};
    }
    int observed = 0;
    int acted = 0;

private:
    Vector u_;
};

}  // namespace

TEST_CASE("zoh_control: documented values") {
    const ZohPolicy p(0.75, 27.55);
    CHECK(zoh_control(scalar(0.5), p).norm() == 0.0);
    CHECK(zoh_control(scalar(0.8), p)[0] == doctest::Approx(-34.4375));
    CHECK(zoh_control(scalar(1.0), p)[0] == doctest::Approx(-27.55));
    CHECK(zoh_control(scalar(-0.75), p)[0] == doctest::Approx(27.55 / 0.75));
    CHECK(27.55 / 0.75 == doctest::Approx(36.733).epsilon(1e-4));
    // threshold belongs to the feedback branch
    CHECK(zoh_control(scalar(0.75), p).norm() > 0.0);
    CHECK(zoh_control(scalar(std::nextafter(0.75, 0.0)), p).norm() == 0.0);
}

TEST_CASE("zoh_control: bounded by beta / lambda") {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n01;
    std::uniform_real_distribution<double> scale(0.0, 3.0);
    const ZohPolicy p(0.6, 5.0);
    for (int i = 0; i < 100000; ++i) {
        const int m = 1 + i % 3;
        Vector e = Vector::NullaryExpr(m, [&] { return n01(rng); });
        e *= scale(rng) / std::max(e.norm(), 1e-300);
        const Vector u = zoh_control(e, p);
        CHECK_MESSAGE(u.norm() <= p.beta / p.lambda * (1 + 1e-15), "e = ", e.transpose());
        if (e.norm() >= p.lambda) {
            // direction opposes the error
            CHECK(u.dot(e) < 0.0);
        }
    }
}

TEST_CASE("ZohPolicy: validation") {
    CHECK_THROWS_AS(ZohPolicy(0.0, 1.0), Error);
    CHECK_THROWS_AS(ZohPolicy(1.0, 1.0), Error);
    CHECK_THROWS_AS(ZohPolicy(0.5, 0.0), Error);
    CHECK_THROWS_AS(ZohPolicy(0.5, NAN), Error);
}

TEST_CASE("combined_control: branch selection") {
    CombinedPolicy p{ZohPolicy(0.75, 27.55), std::make_shared<ConstantDelegate>(scalar(3.2)), 10.0};
    SUBCASE("safe region passes the delegate through") {
        const auto d = combined_control(scalar(0.74), p, context_for(scalar(0.74)));
        CHECK(d.u[0] == 3.2);
        CHECK(d.mode == ControlMode::SafeFeedback);
    }
    SUBCASE("threshold takes the ZoH branch") {
        const auto d = combined_control(scalar(0.75), p, context_for(scalar(0.75)));
        CHECK(d.mode == ControlMode::ZohFeedback);
        CHECK(d.u == zoh_control(scalar(0.75), p.zoh));
    }
    SUBCASE("delegate above u_max is an error, not clipped") {
        p.delegate = std::make_shared<ConstantDelegate>(scalar(10.5));
        try {
            (void)combined_control(scalar(0.1), p, context_for(scalar(0.1)));
            FAIL("expected DelegateExceedsBound");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::DelegateExceedsBound);
        }
    }
    SUBCASE("slack at the bound") {
        p.delegate = std::make_shared<ConstantDelegate>(scalar(10.0 + 0.5e-12));
        CHECK_NOTHROW((void)combined_control(scalar(0.1), p, context_for(scalar(0.1))));
        p.delegate = std::make_shared<ConstantDelegate>(scalar(10.0 + 1e-9));
        CHECK_THROWS_AS((void)combined_control(scalar(0.1), p, context_for(scalar(0.1))), Error);
    }
    SUBCASE("wrong dimension") {
        p.delegate = std::make_shared<ConstantDelegate>(Vector::Zero(2));
        CHECK_THROWS_AS((void)combined_control(scalar(0.1), p, context_for(scalar(0.1))), Error);
    }
}

TEST_CASE("combined_control: identical to zoh_control outside the safe region") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    CombinedPolicy p{ZohPolicy(0.5, 13.0), std::make_shared<RandomSignDelegate>(1, 4.0), 4.0};
    for (int i = 0; i < 10000; ++i) {
        const Vector e = scalar(u(rng));
        const auto d = combined_control(e, p, context_for(e, &rng));
        if (std::abs(e[0]) >= 0.5) {
            CHECK(d.u == zoh_control(e, p.zoh));
            CHECK(d.mode == ControlMode::ZohFeedback);
        } else {
            CHECK(std::abs(d.u[0]) == 4.0);
            CHECK(d.mode == ControlMode::Random);
        }
    }
}

TEST_CASE("sampled_funnel_delegate: documented values") {
    CHECK(sampled_funnel_delegate(scalar(0.0))[0] == 0.0);
    CHECK(sampled_funnel_delegate(scalar(0.5))[0] == doctest::Approx(-2.0 / 3.0));
    CHECK(sampled_funnel_u_max(0.75) == doctest::Approx(1.7142857142857142));
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-0.75, 0.75);
    for (int i = 0; i < 10000; ++i) {
        const Vector e(Eigen::Vector2d(u(rng), u(rng)));
        if (e.norm() >= 0.75) continue;
        CHECK(sampled_funnel_delegate(e).norm() <= sampled_funnel_u_max(0.75) + 1e-12);
    }
}

TEST_CASE("RandomSignDelegate: values on the corners of the bound") {
    std::mt19937_64 rng(3);
    RandomSignDelegate d(2, 10.0);
    int plus = 0;
    for (int i = 0; i < 2000; ++i) {
        const auto a = d.act(context_for(Vector::Zero(2), &rng));
        CHECK(a.u.norm() == doctest::Approx(10.0));
        CHECK(std::abs(a.u[0]) == doctest::Approx(10.0 / std::sqrt(2.0)));
        plus += a.u[0] > 0;
    }
    CHECK(plus > 900);
    CHECK(plus < 1100);
    CHECK_THROWS_AS((void)d.act(context_for(Vector::Zero(2))), Error);
}

TEST_CASE("make_zoh_policy: quiet branch reports Zero") {
    const auto policy = make_zoh_policy(ZohPolicy(0.75, 2.0));
    CHECK(policy(context_for(scalar(0.2))).mode == ControlMode::Zero);
    const auto d = policy(context_for(scalar(-0.9)));
    CHECK(d.mode == ControlMode::ZohFeedback);
    CHECK(d.u[0] == doctest::Approx(2.0 / 0.9));
}

TEST_CASE("make_combined_policy: observe every sample, move blocking in the safe region") {
    auto delegate = std::make_shared<Scripted>(scalar(0.1));
    CombinedPolicy p{ZohPolicy(0.75, 2.0), delegate, 10.0, 3};
    const auto policy = make_combined_policy(p);
    const double errors[] = {0.1, 0.1, 0.1, 0.1, 0.9, 0.1, 0.1};
    std::vector<double> out;
    for (double e : errors) out.push_back(policy(context_for(scalar(e))).u[0]);
    CHECK(delegate->observed == 7);
    // held for three samples, re-queried after the block and after the ZoH interval
    CHECK(out[0] == doctest::Approx(0.1));
    CHECK(out[1] == doctest::Approx(0.1));
    CHECK(out[2] == doctest::Approx(0.1));
    CHECK(out[3] == doctest::Approx(0.2));
    CHECK(out[4] == doctest::Approx(-2.0 / 0.9));
    CHECK(out[5] == doctest::Approx(0.3));
    CHECK(out[6] == doctest::Approx(0.3));
    CHECK(delegate->acted == 3);

    CombinedPolicy bad = p;
    bad.move_blocking = 0;
    CHECK_THROWS_AS((void)make_combined_policy(bad), Error);
    bad = p;
    bad.delegate = nullptr;
    CHECK_THROWS_AS((void)make_combined_policy(bad), Error);
}
