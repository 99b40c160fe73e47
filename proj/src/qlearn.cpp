#include "funnelguard/qlearn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "funnelguard/error.hpp"

namespace funnelguard::qlearn {

Grid::Grid(Vector lo, Vector hi, std::vector<int> bins)
    : lo_(std::move(lo)), hi_(std::move(hi)), bins_(std::move(bins)) {
    require(!bins_.empty() && lo_.size() == static_cast<Eigen::Index>(bins_.size()) &&
                hi_.size() == lo_.size(),
            ErrorCode::InvalidArgument, "grid dimensions mismatch");
    for (std::size_t d = 0; d < bins_.size(); ++d) {
        const auto i = static_cast<Eigen::Index>(d);
        require(std::isfinite(lo_[i]) && std::isfinite(hi_[i]) && lo_[i] < hi_[i],
                ErrorCode::InvalidArgument, "grid needs lo < hi");
        require(bins_[d] >= 2, ErrorCode::InvalidArgument, "grid needs at least 2 bins");
        size_ *= bins_[d];
    }
}

Grid Grid::uniform(int dim, double lo, double hi, int bins) {
    return Grid(Vector::Constant(dim, lo), Vector::Constant(dim, hi),
                std::vector<int>(static_cast<std::size_t>(dim), bins));
}

int Grid::index(const Vector& x) const {
    require(x.size() == dim(), ErrorCode::InvalidArgument, "grid point dimension mismatch");
    int flat = 0;
    for (int d = 0; d < dim(); ++d) {
        const int b = bins_[static_cast<std::size_t>(d)];
        const double w = (hi_[d] - lo_[d]) / b;
        const double v = x[d];
        int cell = std::isnan(v) ? 0 : static_cast<int>(std::floor((v - lo_[d]) / w));
        cell = std::clamp(cell, 0, b - 1);
        flat = flat * b + cell;
    }
    return flat;
}

Vector Grid::center(int index) const {
    require(index >= 0 && index < size_, ErrorCode::InvalidArgument, "grid index out of range");
    Vector c(dim());
    for (int d = dim() - 1; d >= 0; --d) {
        const int b = bins_[static_cast<std::size_t>(d)];
        const int cell = index % b;
        index /= b;
        c[d] = lo_[d] + (cell + 0.5) * (hi_[d] - lo_[d]) / b;
    }
    return c;
}

void EpsilonSchedule::validate() const {
    require(eps0 >= 0.0 && eps0 <= 1.0 && eps_min >= 0.0 && eps_min <= 1.0,
            ErrorCode::InvalidArgument, "epsilon values must lie in [0,1]");
    require(decay >= 0.0 && decay <= 1.0, ErrorCode::InvalidArgument,
            "epsilon decay must lie in [0,1]");
    require(period > 0.0 && initial_window >= 0.0, ErrorCode::InvalidArgument,
            "epsilon period must be positive");
}

double EpsilonSchedule::at(double t) const {
    double eps = eps0;
    if (t > initial_window) {
        const double k = std::ceil((t - initial_window) / period);
        eps = eps0 * std::pow(decay, k);
    }
    return std::max(eps, eps_min);
}

QTable::QTable(int states, int actions, LearningRate rate, double gamma)
    : values_(Matrix::Zero(states, actions)),
      visits_(static_cast<std::size_t>(states) * static_cast<std::size_t>(actions), 0),
      rate_(rate),
      gamma_(gamma) {
    require(states >= 1 && actions >= 1, ErrorCode::InvalidArgument, "empty Q-table");
    require(gamma > 0.0 && gamma < 1.0, ErrorCode::InvalidArgument, "gamma must lie in (0,1)");
    require(rate.kind == LearningRate::Kind::InverseVisits ||
                (rate.value >= 0.0 && rate.value <= 1.0),
            ErrorCode::InvalidArgument, "learning rate must lie in [0,1]");
}

std::size_t QTable::flat(int x, int u) const {
    require(x >= 0 && x < states() && u >= 0 && u < actions(), ErrorCode::InvalidArgument,
            "Q-table index out of range");
    return static_cast<std::size_t>(x) * static_cast<std::size_t>(actions()) +
           static_cast<std::size_t>(u);
}

void QTable::set_value(int x, int u, double v) {
    (void)flat(x, u);
    values_(x, u) = v;
}

int QTable::greedy(int x) const {
    (void)flat(x, 0);
    int best = 0;
    for (int u = 1; u < actions(); ++u) {
        if (values_(x, u) > values_(x, best)) best = u;
    }
    return best;
}

double QTable::max_value(int x) const { return values_(x, greedy(x)); }

double QTable::update(int x, int u, double r, int x_next) {
    return update(x, u, r, x_next, gamma_);
}

double QTable::update(int x, int u, double r, int x_next, double discount) {
    const std::size_t i = flat(x, u);
    (void)flat(x_next, 0);
    const double a = rate_.kind == LearningRate::Kind::Constant
                         ? rate_.value
                         : 1.0 / (1.0 + static_cast<double>(visits_[i]));
    const double target = r + discount * max_value(x_next);
    values_(x, u) = (1.0 - a) * values_(x, u) + a * target;
    ++visits_[i];
    return a;
}

void QTable::write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + path);
    char buf[32];
    for (int x = 0; x < states(); ++x) {
        for (int u = 0; u < actions(); ++u) {
            std::snprintf(buf, sizeof buf, "%.17g", values_(x, u));
            out << (u ? "," : "") << buf;
        }
        out << '\n';
    }
}

QTable QTable::read_csv(const std::string& path, LearningRate rate, double gamma) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot read " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
        if (!rows.empty() && row.size() != rows.front().size()) {
            throw Error(ErrorCode::Io, "ragged Q-table CSV " + path);
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw Error(ErrorCode::Io, "empty Q-table CSV " + path);
    QTable t(static_cast<int>(rows.size()), static_cast<int>(rows.front().size()), rate, gamma);
    for (int x = 0; x < t.states(); ++x) {
        for (int u = 0; u < t.actions(); ++u) {
            t.values_(x, u) = rows[static_cast<std::size_t>(x)][static_cast<std::size_t>(u)];
        }
    }
    return t;
}

double reward(const Vector& e_r, const Vector& u, double alpha_u) noexcept {
    return -e_r.squaredNorm() - alpha_u * u.squaredNorm();
}

double q_update(QTable& table, int x, int u, double r, int x_next) {
    return table.update(x, u, r, x_next);
}

int select_action(const QTable& table, int x, std::mt19937_64& rng, double eps) {
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    if (coin(rng) < eps) {
        std::uniform_int_distribution<int> pick(0, table.actions() - 1);
        return pick(rng);
    }
    return table.greedy(x);
}

namespace {

Grid make_action_grid(const QLearnConfig& c, int dim) {
    const double box = dim == 1 ? c.u_max : c.u_max / std::sqrt(static_cast<double>(dim));
    return Grid::uniform(dim, -box, box, c.action_bins);
}

}  // namespace

QLearnDelegate::QLearnDelegate(const QLearnConfig& config, int dim)
    : config_(config),
      states_(Grid::uniform(dim, -config.lambda, config.lambda, config.state_bins)),
      actions_(make_action_grid(config, dim)),
      table_(states_.size(), actions_.size(), config.rate, config.gamma),
      alpha_u_(config.alpha_u < 0.0 ? 1.0 / config.u_max : config.alpha_u) {
    require(config.lambda > 0.0 && config.lambda < 1.0, ErrorCode::InvalidArgument,
            "lambda must lie in (0,1)");
    require(config.u_max > 0.0, ErrorCode::InvalidArgument, "u_max must be positive");
    config_.epsilon.validate();
}

void QLearnDelegate::observe(const SampleContext& ctx) {
    const Vector& e_r = ctx.e_r();
    if (pending_) {
        // reward of the interval that just ended: e_r at its start, input actually held
        const double r = reward(last_e_r_, ctx.u_prev, alpha_u_);
        rewards_.push_back({ctx.t, r});
        pending_->ret += pending_->discount * r;
        pending_->discount *= table_.gamma();
        if (e_r.norm() < config_.lambda) {
            table_.update(pending_->x, pending_->u, pending_->ret, states_.index(e_r),
                          pending_->discount);
            pending_.reset();
        }
    }
    last_e_r_ = e_r;
}

DelegateAction QLearnDelegate::act(const SampleContext& ctx) {
    require(ctx.rng != nullptr, ErrorCode::InvalidArgument, "Q-learning delegate needs an rng");
    const int x = states_.index(ctx.e_r());
    const int u = select_action(table_, x, *ctx.rng, config_.epsilon.at(ctx.t));
    pending_ = Pending{x, u};
    return {actions_.center(u), ControlMode::SafeFeedback};
}

}  // namespace funnelguard::qlearn
