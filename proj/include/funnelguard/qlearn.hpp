#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "funnelguard/controller.hpp"

namespace funnelguard::qlearn {

/// Uniform grid on the box [lo, hi] with `bins` cells per dimension, flattened row-major
/// (first dimension slowest). Points outside the box map to the nearest edge cell.
class Grid {
public:
    Grid(Vector lo, Vector hi, std::vector<int> bins);
    /// Same interval and bin count in every dimension.
    static Grid uniform(int dim, double lo, double hi, int bins);

    [[nodiscard]] int dim() const noexcept { return static_cast<int>(bins_.size()); }
    [[nodiscard]] int size() const noexcept { return size_; }
    [[nodiscard]] int index(const Vector& x) const;
    [[nodiscard]] Vector center(int index) const;
    [[nodiscard]] const Vector& lo() const noexcept { return lo_; }
    [[nodiscard]] const Vector& hi() const noexcept { return hi_; }
    [[nodiscard]] const std::vector<int>& bins() const noexcept { return bins_; }

private:
    Vector lo_;
    Vector hi_;
    std::vector<int> bins_;
    int size_ = 1;
};

/// eps(t) = eps0 for t <= initial_window, then eps0 * decay^ceil((t - initial_window) / period),
/// never below eps_min.
struct EpsilonSchedule {
    double eps0 = 1.0;
    double initial_window = 1.0;
    double decay = 0.5;
    double period = 1.0;
    double eps_min = 0.0;

    void validate() const;
    [[nodiscard]] double at(double t) const;
};

struct LearningRate {
    enum class Kind { Constant, InverseVisits };
    Kind kind = Kind::Constant;
    double value = 0.8;

    static LearningRate constant(double a) { return {Kind::Constant, a}; }
    /// alpha = 1 / (1 + visits of the pair before this update)
    static LearningRate inverse_visits() { return {Kind::InverseVisits, 0.0}; }
};

class QTable {
public:
    QTable(int states, int actions, LearningRate rate, double gamma);

    [[nodiscard]] int states() const noexcept { return static_cast<int>(values_.rows()); }
    [[nodiscard]] int actions() const noexcept { return static_cast<int>(values_.cols()); }
    [[nodiscard]] double gamma() const noexcept { return gamma_; }
    [[nodiscard]] const LearningRate& rate() const noexcept { return rate_; }
    [[nodiscard]] double value(int x, int u) const { return values_(x, u); }
    [[nodiscard]] long visits(int x, int u) const { return visits_[flat(x, u)]; }
    [[nodiscard]] const Matrix& values() const noexcept { return values_; }
    void set_value(int x, int u, double v);

    /// Lowest index among the maximizers of row x.
    [[nodiscard]] int greedy(int x) const;
    [[nodiscard]] double max_value(int x) const;

    /// Q(x,u) <- (1 - a) Q(x,u) + a (r + gamma max_u' Q(x_next,u')); returns the rate a used.
    double update(int x, int u, double reward, int x_next);
    /// Same with an explicit discount on the successor value (gamma^k after k intervals).
    double update(int x, int u, double reward, int x_next, double discount);

    void write_csv(const std::string& path) const;
    static QTable read_csv(const std::string& path, LearningRate rate, double gamma);

private:
    [[nodiscard]] std::size_t flat(int x, int u) const;
    Matrix values_;
    std::vector<long> visits_;
    LearningRate rate_;
    double gamma_;
};

/// r(e_r, u) = -||e_r||^2 - alpha_u ||u||^2
[[nodiscard]] double reward(const Vector& e_r, const Vector& u, double alpha_u) noexcept;

double q_update(QTable& table, int x, int u, double r, int x_next);

/// Uniform random action with probability eps, greedy otherwise. Always consumes one uniform
/// draw for the coin so that runs with different eps stay aligned.
[[nodiscard]] int select_action(const QTable& table, int x, std::mt19937_64& rng, double eps);

struct QLearnConfig {
    int state_bins = 8;
    int action_bins = 25;
    LearningRate rate = LearningRate::constant(0.8);
    double gamma = 0.9;
    EpsilonSchedule epsilon;
    /// Negative selects the default 1/u_max.
    double alpha_u = -1.0;
    double lambda = 0.75;
    double u_max = 10.0;
};

struct RewardSample {
    double t;
    double reward;
};

/// Tabular learner acting on the discretized e_r. A transition runs from one safe-region
/// decision to the next; ZoH intervals in between add their discounted rewards, charged
/// with the input that was actually applied.
class QLearnDelegate final : public Delegate {
public:
    QLearnDelegate(const QLearnConfig& config, int dim);

    void observe(const SampleContext& ctx) override;
    DelegateAction act(const SampleContext& ctx) override;

    [[nodiscard]] const QTable& table() const noexcept { return table_; }
    [[nodiscard]] const Grid& state_grid() const noexcept { return states_; }
    [[nodiscard]] const Grid& action_grid() const noexcept { return actions_; }
    [[nodiscard]] const std::vector<RewardSample>& rewards() const noexcept { return rewards_; }
    [[nodiscard]] double alpha_u() const noexcept { return alpha_u_; }

private:
    struct Pending {
        int x = 0;
        int u = 0;
        double ret = 0.0;
        double discount = 1.0;
    };

    QLearnConfig config_;
    Grid states_;
    Grid actions_;
    QTable table_;
    double alpha_u_;
    std::optional<Pending> pending_;
    Vector last_e_r_;
    std::vector<RewardSample> rewards_;
};

}  // namespace funnelguard::qlearn
