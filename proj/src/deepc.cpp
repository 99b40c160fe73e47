#include "funnelguard/deepc.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include <Eigen/Eigenvalues>

#include "funnelguard/error.hpp"

namespace funnelguard::deepc {

namespace {

void write_matrix_csv(const std::filesystem::path& path, const Matrix& m) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
    char buf[32];
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", m(i, j));
            out << (j ? "," : "") << buf;
        }
        out << '\n';
    }
}

Matrix block_rows(const Matrix& h, int block, int count, int dim) {
    return h.middleRows(static_cast<Eigen::Index>(block) * dim,
                        static_cast<Eigen::Index>(count) * dim);
}

bool positive_definite(const Matrix& m, double rel_tol) {
    const Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) return false;
    const auto& ev = es.eigenvalues();
    return ev.size() == 0 || ev[0] > rel_tol * std::max(ev[ev.size() - 1], 0.0);
}

}  // namespace

double input_box(double u_max, int m) {
    return m == 1 ? u_max : u_max / std::sqrt(static_cast<double>(m));
}

CondensedQp build_ocp(const OcpProblem& p) {
    require(p.hankel != nullptr, ErrorCode::InvalidArgument, "OCP needs Hankel data");
    const HankelData& h = *p.hankel;
    if (!h.pe_satisfied) {
        throw Error(ErrorCode::NotPersistentlyExciting,
                    "data is not persistently exciting of order " +
                        std::to_string(h.pe_order_checked));
    }
    const int L = p.horizon;
    const int n = p.past;
    const int m = h.input_dim;
    const int py = h.output_dim;
    require(L >= 1 && n >= 1 && h.depth == L + n, ErrorCode::InvalidArgument,
            "Hankel depth must equal horizon + past");
    require(static_cast<int>(p.u_past.size()) == n && static_cast<int>(p.y_past.size()) == n,
            ErrorCode::InvalidArgument, "past window must hold `past` samples");
    require(static_cast<int>(p.reference.size()) == L, ErrorCode::InvalidArgument,
            "reference must cover the horizon");
    require(p.Q.rows() == py && p.Q.cols() == py && p.R.rows() == m && p.R.cols() == m,
            ErrorCode::InvalidArgument, "weight dimensions mismatch");
    require(p.Q.isApprox(p.Q.transpose()) && p.R.isApprox(p.R.transpose()) &&
                positive_definite(p.Q, 0.0) && positive_definite(p.R, 0.0),
            ErrorCode::NotPositiveDefinite, "Q and R must be symmetric positive definite");
    require(p.lambda_nu >= 0.0, ErrorCode::InvalidArgument, "lambda_nu must be non-negative");
    require(!p.lambda_sigma || *p.lambda_sigma >= 0.0, ErrorCode::InvalidArgument,
            "lambda_sigma must be non-negative");
    require(p.u_max > 0.0, ErrorCode::InvalidArgument, "u_max must be positive");

    const Eigen::Index cols = h.H_u.cols();
    const Matrix Up = block_rows(h.H_u, 0, n, m);
    const Matrix Uf = block_rows(h.H_u, n, L, m);
    const Matrix Yp = block_rows(h.H_y, 0, n, py);

    // tracking rows T nu - target, weighted per block
    std::vector<Matrix> T;
    std::vector<Vector> target;
    std::vector<Matrix> W;
    const bool derivative = !p.mu.empty();
    if (!derivative) {
        for (int f = 0; f < L; ++f) {
            T.push_back(block_rows(h.H_y, n + f, 1, py));
            target.push_back(p.reference[static_cast<std::size_t>(f)].at(0));
            W.push_back(p.Q);
        }
    } else {
        const int orders = static_cast<int>(p.mu.size());
        require(orders - 1 <= n, ErrorCode::InvalidArgument,
                "difference order exceeds the past window");
        require(static_cast<int>(p.phi.size()) == L && p.tau > 0.0, ErrorCode::InvalidArgument,
                "derivative cost needs phi on the horizon and tau");
        for (int l = 0; l < orders; ++l) {
            require(p.mu[static_cast<std::size_t>(l)] >= 0.0 &&
                        (l == 0 || p.mu[static_cast<std::size_t>(l)] <=
                                       p.mu[static_cast<std::size_t>(l - 1)]),
                    ErrorCode::InvalidArgument, "mu must be non-negative and non-increasing");
        }
        for (int f = 0; f < L; ++f) {
            const int w = n + f;
            for (int l = 0; l < orders; ++l) {
                Matrix rows = Matrix::Zero(py, cols);
                for (int j = 0; j <= l; ++j) {
                    const double c = ((j % 2) ? -1.0 : 1.0) * binomial(l, j);
                    rows += c * block_rows(h.H_y, w - j, 1, py);
                }
                rows /= std::pow(p.tau, l);
                T.push_back(std::move(rows));
                target.push_back(p.reference[static_cast<std::size_t>(f)].at(
                    static_cast<std::size_t>(l)));
                W.push_back(p.phi[static_cast<std::size_t>(f)] * p.mu[static_cast<std::size_t>(l)] *
                            p.Q);
            }
        }
    }

    CondensedQp qp;
    Matrix H = p.lambda_nu * Matrix::Identity(cols, cols);
    Vector g = Vector::Zero(cols);
    double c0 = 0.0;
    for (std::size_t b = 0; b < T.size(); ++b) {
        const Matrix WT = W[b] * T[b];
        H.noalias() += T[b].transpose() * WT;
        g.noalias() -= WT.transpose() * target[b];
        c0 += target[b].dot(W[b] * target[b]);
    }
    for (int f = 0; f < L; ++f) {
        const Matrix Ui = block_rows(Uf, f, 1, m);
        H.noalias() += Ui.transpose() * p.R * Ui;
    }

    Matrix Wp(static_cast<Eigen::Index>(n) * (m + py), cols);
    Wp << Up, Yp;
    Vector w_past(Wp.rows());
    for (int i = 0; i < n; ++i) {
        w_past.segment(i * m, m) = p.u_past[static_cast<std::size_t>(i)];
        w_past.segment(static_cast<Eigen::Index>(n) * m + i * py, py) =
            p.y_past[static_cast<std::size_t>(i)];
    }
    if (p.lambda_sigma) {
        const double ls = *p.lambda_sigma;
        H.noalias() += ls * Wp.transpose() * Wp;
        g.noalias() -= ls * Wp.transpose() * w_past;
        c0 += ls * w_past.squaredNorm();
    }
    qp.P = 2.0 * H;
    qp.P = 0.5 * (qp.P + qp.P.transpose());
    qp.q = 2.0 * g;
    qp.constant = c0;
    if (!positive_definite(qp.P, 1e-13)) {
        throw Error(ErrorCode::NotPositiveDefinite,
                    "OCP Hessian is not positive definite; increase lambda_nu or R");
    }

    const double box = input_box(p.u_max, m);
    const Eigen::Index box_rows = Uf.rows();
    const Eigen::Index eq_rows = p.lambda_sigma ? 0 : Wp.rows();
    qp.A.resize(box_rows + eq_rows, cols);
    qp.l.resize(box_rows + eq_rows);
    qp.u.resize(box_rows + eq_rows);
    qp.A.topRows(box_rows) = Uf;
    qp.l.head(box_rows).setConstant(-box);
    qp.u.head(box_rows).setConstant(box);
    if (eq_rows > 0) {
        qp.A.bottomRows(eq_rows) = Wp;
        qp.l.tail(eq_rows) = w_past;
        qp.u.tail(eq_rows) = w_past;
    }
    qp.box_rows = static_cast<int>(box_rows);
    return qp;
}

OcpSolution solve_ocp(const OcpProblem& p, const qp::Settings& settings, const Vector* warm_nu) {
    const CondensedQp cq = build_ocp(p);
    OcpSolution sol;
    const Eigen::Index eq = cq.A.rows() - cq.box_rows;
    if (eq == 0) {
        sol.stats = qp::solve(cq.P, cq.q, cq.A, cq.l, cq.u, settings, warm_nu);
        sol.nu = sol.stats.x;
    } else {
        // Eliminate the past-window equalities: nu = nu0 + N xi with N spanning ker(W_p).
        // The reduced problem only carries the input box and is far better conditioned.
        const Matrix Weq = cq.A.bottomRows(eq);
        const Vector beq = cq.l.tail(eq);
        const Eigen::JacobiSVD<Matrix> svd(Weq, Eigen::ComputeThinU | Eigen::ComputeFullV);
        const auto& s = svd.singularValues();
        Eigen::Index rank = 0;
        while (rank < s.size() && s[rank] > 1e-12 * s[0]) ++rank;
        const Matrix& V = svd.matrixV();
        const Vector nu0 = V.leftCols(rank) *
                           (svd.matrixU().leftCols(rank).transpose() * beq)
                               .cwiseQuotient(s.head(rank));
        const Matrix N = V.rightCols(V.cols() - rank);
        const Matrix Abox = cq.A.topRows(cq.box_rows);
        Matrix Pr = N.transpose() * cq.P * N;
        Pr = 0.5 * (Pr + Pr.transpose());
        const Vector qr = N.transpose() * (cq.P * nu0 + cq.q);
        const Matrix Ar = Abox * N;
        const Vector shift = Abox * nu0;
        const Vector lr = cq.l.head(cq.box_rows) - shift;
        const Vector ur = cq.u.head(cq.box_rows) - shift;
        Vector warm_xi;
        const Vector* warm = nullptr;
        if (warm_nu != nullptr && warm_nu->size() == nu0.size()) {
            warm_xi = N.transpose() * (*warm_nu - nu0);
            warm = &warm_xi;
        }
        sol.stats = qp::solve(Pr, qr, Ar, lr, ur, settings, warm);
        sol.nu = nu0 + N * sol.stats.x;
        sol.stats.x = sol.nu;
        sol.stats.objective = 0.5 * sol.nu.dot(cq.P * sol.nu) + cq.q.dot(sol.nu);
    }
    sol.objective = sol.stats.objective + cq.constant;

    const HankelData& h = *p.hankel;
    const int m = h.input_dim;
    const int py = h.output_dim;
    const Vector u_all = h.H_u * sol.nu;
    const Vector y_all = h.H_y * sol.nu;
    for (int f = 0; f < p.horizon; ++f) {
        sol.u_plan.push_back(u_all.segment((p.past + f) * m, m));
        sol.y_pred.push_back(y_all.segment((p.past + f) * py, py));
    }
    sol.sigma = Vector::Zero(static_cast<Eigen::Index>(p.past) * (m + py));
    if (p.lambda_sigma) {
        for (int i = 0; i < p.past; ++i) {
            sol.sigma.segment(i * m, m) =
                u_all.segment(i * m, m) - p.u_past[static_cast<std::size_t>(i)];
            sol.sigma.segment(static_cast<Eigen::Index>(p.past) * m + i * py, py) =
                y_all.segment(i * py, py) - p.y_past[static_cast<std::size_t>(i)];
        }
    }
    return sol;
}

DeepcController::DeepcController(DeepcConfig config, int input_dim, int relative_degree)
    : config_(std::move(config)), m_(input_dim), r_(relative_degree) {
    require(config_.horizon >= 1 && config_.past >= 1, ErrorCode::InvalidArgument,
            "horizon and past must be >= 1");
    require(!config_.adaptive_horizon ||
                (config_.min_horizon >= 1 && config_.min_horizon <= config_.horizon),
            ErrorCode::InvalidArgument, "min_horizon must lie in [1, horizon]");
    require(config_.growth_interval >= 1, ErrorCode::InvalidArgument,
            "growth_interval must be >= 1");
    require(config_.u_max > 0.0, ErrorCode::InvalidArgument, "u_max must be positive");
    require(m_ >= 1 && r_ >= 1, ErrorCode::InvalidArgument, "dimensions must be positive");
    require(!config_.derivative_cost || config_.mu.empty() ||
                static_cast<int>(config_.mu.size()) == r_,
            ErrorCode::InvalidArgument, "derivative cost needs one weight per derivative order");
    if (!config_.dump_dir.empty()) std::filesystem::create_directories(config_.dump_dir);
}

int DeepcController::pe_extra() const {
    return config_.pe_order == PeOrder::LPlus2N ? 2 * config_.past : config_.past;
}

bool DeepcController::try_build(int horizon) {
    const int order = horizon + pe_extra();
    const int depth = horizon + config_.past;
    const auto n = static_cast<int>(u_hist_.size());
    // a depth-`order` Hankel with m*order rows needs at least that many columns
    if (n - order + 1 < m_ * order || n < depth) return false;
    if (!is_persistently_exciting(u_hist_, order, config_.rank_tol)) return false;
    auto data = std::make_shared<HankelData>(
        make_hankel_data(u_hist_, y_hist_, depth, order, config_.rank_tol));
    if (!data->pe_satisfied) return false;
    hankel_ = std::move(data);
    horizon_ = horizon;
    ++builds_;
    if (!config_.dump_dir.empty()) dump_hankel();
    return true;
}

void DeepcController::record(const Vector& u, const Vector& y, double t) {
    require(u.size() == m_ && y.size() == m_, ErrorCode::InvalidArgument,
            "sample dimension mismatch");
    u_hist_.push_back(u);
    y_hist_.push_back(y);
    if (!pe()) {
        const int h0 = config_.adaptive_horizon ? config_.min_horizon : config_.horizon;
        if (try_build(h0)) {
            pe_time_ = t;
            grown_at_ = u_hist_.size();
        }
        return;
    }
    if (config_.adaptive_horizon && horizon_ < config_.horizon) {
        const auto interval = static_cast<std::size_t>(config_.growth_interval);
        if (u_hist_.size() - grown_at_ >= interval && try_build(horizon_ + 1)) {
            grown_at_ = u_hist_.size();
        }
        return;
    }
    if (config_.rebuild) try_build(horizon_);
}

DelegateAction DeepcController::act(double t, double tau, const FunnelSpec& funnel,
                                    const ReferenceSpec& reference, std::mt19937_64& rng) {
    const double box = input_box(config_.u_max, m_);
    if (!pe()) {
        std::uniform_real_distribution<double> dist(-box, box);
        Vector u(m_);
        for (int i = 0; i < m_; ++i) u[i] = dist(rng);
        return {u, ControlMode::Random};
    }

    const int n = config_.past;
    OcpProblem p;
    p.hankel = hankel_;
    p.horizon = horizon_;
    p.past = n;
    p.u_past.assign(u_hist_.end() - n, u_hist_.end());
    p.y_past.assign(y_hist_.end() - n, y_hist_.end());
    p.Q = config_.q_weight * Matrix::Identity(m_, m_);
    p.R = config_.r_weight * Matrix::Identity(m_, m_);
    p.lambda_nu = config_.lambda_nu;
    p.lambda_sigma = config_.lambda_sigma;
    p.u_max = config_.u_max;
    p.tau = tau;
    for (int f = 0; f < horizon_; ++f) {
        const double ti = t + (f + 1) * tau;
        p.reference.push_back(reference.evaluate(ti));
        if (config_.derivative_cost) p.phi.push_back(funnel.phi(ti));
    }
    if (config_.derivative_cost) {
        if (config_.mu.empty()) {
            for (int l = 0; l < r_; ++l) p.mu.push_back(std::pow(1e-2, l) / funnel.phi(0.0));
        } else {
            p.mu = config_.mu;
        }
    }

    const Vector* warm = nullptr;
    if (last_ && last_->nu.size() == hankel_->H_u.cols()) warm = &last_->nu;
    OcpSolution sol = solve_ocp(p, config_.qp, warm);
    ++solves_;
    const bool fallback = sol.stats.status == qp::Status::MaxIterations;
    if (!config_.dump_dir.empty()) log_solve(t, sol, fallback);
    if (fallback) {
        ++fallbacks_;
        last_ = std::move(sol);
        return {Vector::Zero(m_), ControlMode::Zero};
    }
    // the solver meets the box only to within its tolerance; project onto it so that the
    // hard bound in the combined law holds exactly
    Vector u = sol.u_plan.front();
    u = u.cwiseMax(-box).cwiseMin(box);
    last_ = std::move(sol);
    return {u, ControlMode::SafeFeedback};
}

void DeepcController::dump_hankel() const {
    const std::filesystem::path dir(config_.dump_dir);
    const std::string tag = std::to_string(builds_);
    write_matrix_csv(dir / ("hankel_u_" + tag + ".csv"), hankel_->H_u);
    write_matrix_csv(dir / ("hankel_y_" + tag + ".csv"), hankel_->H_y);
}

void DeepcController::log_solve(double t, const OcpSolution& sol, bool fallback) const {
    const std::filesystem::path path = std::filesystem::path(config_.dump_dir) / "qp_log.csv";
    const bool fresh = !std::filesystem::exists(path);
    std::ofstream out(path, std::ios::app);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
    if (fresh) out << "t,horizon,iterations,primal_residual,dual_residual,objective,u0,y1,fallback\n";
    char buf[256];
    std::snprintf(buf, sizeof buf, "%.17g,%d,%d,%.6g,%.6g,%.17g,%.17g,%.17g,%d\n", t, horizon_,
                  sol.stats.iterations, sol.stats.primal_residual, sol.stats.dual_residual,
                  sol.objective, sol.u_plan.front()[0], sol.y_pred.front()[0], fallback ? 1 : 0);
    out << buf;
}

std::optional<DelegateAction> deepc_policy_step(DeepcController& controller,
                                                const SampleContext& ctx, double lambda) {
    if (ctx.index >= 1) controller.record(ctx.u_prev, ctx.y(), ctx.t);
    if (!(ctx.e_r().norm() < lambda)) return std::nullopt;
    require(ctx.rng != nullptr && ctx.funnel != nullptr && ctx.reference != nullptr,
            ErrorCode::InvalidArgument, "sample context is incomplete");
    return controller.act(ctx.t, ctx.tau, *ctx.funnel, *ctx.reference, *ctx.rng);
}

void DeepcDelegate::observe(const SampleContext& ctx) {
    if (ctx.index >= 1) controller_->record(ctx.u_prev, ctx.y(), ctx.t);
}

DelegateAction DeepcDelegate::act(const SampleContext& ctx) {
    require(ctx.rng != nullptr && ctx.funnel != nullptr && ctx.reference != nullptr,
            ErrorCode::InvalidArgument, "sample context is incomplete");
    return controller_->act(ctx.t, ctx.tau, *ctx.funnel, *ctx.reference, *ctx.rng);
}

}  // namespace funnelguard::deepc
