#include "funnelguard/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include "funnelguard/error.hpp"

namespace funnelguard::qp {

namespace {

constexpr double kMinScaling = 1e-4;
constexpr double kMaxScaling = 1e4;
constexpr double kRhoMin = 1e-6;
constexpr double kRhoMax = 1e6;
constexpr double kRhoEqScale = 1e3;
constexpr double kPolishDelta = 1e-6;
constexpr int kRefineSteps = 10;

double inf_norm(const Vector& v) { return v.size() == 0 ? 0.0 : v.lpNorm<Eigen::Infinity>(); }

double clip_scale(double v) {
    if (!(v > kMinScaling)) return v == 0.0 ? 1.0 : kMinScaling;
    return std::min(v, kMaxScaling);
}

struct Scaling {
    Vector D;
    Vector E;
    double c = 1.0;
};

// Ruiz equilibration of the KKT matrix followed by a cost scaling.
Scaling equilibrate(Matrix& P, Vector& q, Matrix& A, int iters) {
    const Eigen::Index n = P.rows();
    const Eigen::Index m = A.rows();
    Scaling s{Vector::Ones(n), Vector::Ones(m), 1.0};
    for (int it = 0; it < iters; ++it) {
        Vector dx(n);
        for (Eigen::Index j = 0; j < n; ++j) {
            double norm = P.col(j).lpNorm<Eigen::Infinity>();
            if (m > 0) norm = std::max(norm, A.col(j).lpNorm<Eigen::Infinity>());
            dx[j] = 1.0 / std::sqrt(clip_scale(norm));
        }
        Vector dz(m);
        for (Eigen::Index i = 0; i < m; ++i) {
            dz[i] = 1.0 / std::sqrt(clip_scale(A.row(i).lpNorm<Eigen::Infinity>()));
        }
        P = dx.asDiagonal() * P * dx.asDiagonal();
        A = dz.asDiagonal() * A * dx.asDiagonal();
        q = dx.cwiseProduct(q);
        s.D = s.D.cwiseProduct(dx);
        s.E = s.E.cwiseProduct(dz);

        double mean_col = 0.0;
        for (Eigen::Index j = 0; j < n; ++j) mean_col += P.col(j).lpNorm<Eigen::Infinity>();
        mean_col /= static_cast<double>(std::max<Eigen::Index>(n, 1));
        const double gamma = 1.0 / clip_scale(std::max(mean_col, inf_norm(q)));
        P *= gamma;
        q *= gamma;
        s.c *= gamma;
    }
    return s;
}

Vector project(const Vector& v, const Vector& l, const Vector& u) {
    return v.cwiseMax(l).cwiseMin(u);
}

struct Residuals {
    double prim = 0.0;
    double dual = 0.0;
    double eps_prim = 0.0;
    double eps_dual = 0.0;

    [[nodiscard]] double score() const {
        return std::max(prim / eps_prim, dual / eps_dual);
    }
    [[nodiscard]] bool converged() const { return prim <= eps_prim && dual <= eps_dual; }
};

Residuals unscaled_residuals(const Matrix& P, const Vector& q, const Matrix& A, const Vector& l,
                             const Vector& u, const Vector& x, const Vector& y,
                             const Settings& st) {
    const Vector ax = A * x;
    const Vector z = project(ax, l, u);
    const Vector px = P * x;
    const Vector aty = A.transpose() * y;
    Residuals r;
    r.prim = inf_norm(ax - z);
    r.dual = inf_norm(px + q + aty);
    r.eps_prim = st.eps_abs + st.eps_rel * std::max(inf_norm(ax), inf_norm(z));
    r.eps_dual = st.eps_abs + st.eps_rel * std::max({inf_norm(px), inf_norm(aty), inf_norm(q)});
    return r;
}

struct Polished {
    Vector x;
    Vector y;
    Residuals res;
    bool ok = false;
};

// Solve the equality-constrained problem on the guessed active set and accept it only if the
// result satisfies the KKT conditions (feasibility, stationarity, multiplier signs).
Polished polish(const Matrix& P, const Vector& q, const Matrix& A, const Vector& l,
                const Vector& u, const Vector& z, const Vector& y, const Settings& st) {
    const Eigen::Index n = P.rows();
    const Eigen::Index m = A.rows();
    std::vector<Eigen::Index> rows;
    std::vector<int> side;  // -1 lower, +1 upper, 0 equality
    for (Eigen::Index i = 0; i < m; ++i) {
        if (l[i] == u[i]) {
            rows.push_back(i);
            side.push_back(0);
        } else if (l[i] > -kInfinity && z[i] - l[i] < -y[i]) {
            rows.push_back(i);
            side.push_back(-1);
        } else if (u[i] < kInfinity && u[i] - z[i] < y[i]) {
            rows.push_back(i);
            side.push_back(1);
        }
    }
    const auto na = static_cast<Eigen::Index>(rows.size());
    Matrix K = Matrix::Zero(n + na, n + na);
    K.topLeftCorner(n, n) = P;
    Vector rhs(n + na);
    rhs.head(n) = -q;
    for (Eigen::Index k = 0; k < na; ++k) {
        const Eigen::Index i = rows[static_cast<std::size_t>(k)];
        K.block(n + k, 0, 1, n) = A.row(i);
        K.block(0, n + k, n, 1) = A.row(i).transpose();
        rhs[n + k] = side[static_cast<std::size_t>(k)] == 1 ? u[i] : l[i];
    }
    Matrix Kreg = K;
    Kreg.topLeftCorner(n, n).diagonal().array() += kPolishDelta;
    Kreg.bottomRightCorner(na, na).diagonal().array() -= kPolishDelta;
    const Eigen::PartialPivLU<Matrix> lu(Kreg);
    Vector sol = lu.solve(rhs);
    for (int it = 0; it < kRefineSteps; ++it) sol += lu.solve(rhs - K * sol);

    Polished out;
    if (!sol.allFinite()) return out;
    out.x = sol.head(n);
    out.y = Vector::Zero(m);
    for (Eigen::Index k = 0; k < na; ++k) out.y[rows[static_cast<std::size_t>(k)]] = sol[n + k];
    out.res = unscaled_residuals(P, q, A, l, u, out.x, out.y, st);
    bool signs = true;
    for (Eigen::Index k = 0; k < na && signs; ++k) {
        const double yk = sol[n + k];
        const int sd = side[static_cast<std::size_t>(k)];
        if (sd == -1 && yk > out.res.eps_dual) signs = false;
        if (sd == 1 && yk < -out.res.eps_dual) signs = false;
    }
    out.ok = signs && out.res.converged();
    return out;
}

}  // namespace

Result solve(const Matrix& P, const Vector& q, const Matrix& A, const Vector& l, const Vector& u,
             const Settings& st, const Vector* warm_x) {
    const Eigen::Index n = P.rows();
    const Eigen::Index m = A.rows();
    require(P.cols() == n && q.size() == n, ErrorCode::InvalidArgument, "P and q sizes differ");
    require(A.cols() == n || m == 0, ErrorCode::InvalidArgument, "A has the wrong column count");
    require(l.size() == m && u.size() == m, ErrorCode::InvalidArgument, "bound sizes differ");
    require(P.allFinite() && q.allFinite() && A.allFinite(), ErrorCode::NonFinite,
            "QP data must be finite");
    require(n == 0 || (P - P.transpose()).cwiseAbs().maxCoeff() <=
                          1e-9 * (1.0 + P.cwiseAbs().maxCoeff()),
            ErrorCode::InvalidArgument, "P must be symmetric");
    require(st.max_iter >= 1 && st.rho > 0.0 && st.sigma > 0.0 && st.alpha > 0.0 &&
                st.alpha < 2.0,
            ErrorCode::InvalidArgument, "invalid QP settings");

    Vector lo = l.cwiseMax(-kInfinity);
    Vector hi = u.cwiseMin(kInfinity);
    for (Eigen::Index i = 0; i < m; ++i) {
        require(!std::isnan(lo[i]) && !std::isnan(hi[i]) && lo[i] <= hi[i],
                ErrorCode::InvalidArgument, "bounds must satisfy l <= u");
    }
    if (n == 0) {
        // nothing to choose: feasible exactly when 0 lies in every [l_i, u_i]
        Result r;
        r.x = Vector(0);
        r.y = Vector::Zero(m);
        for (Eigen::Index i = 0; i < m; ++i) {
            r.primal_residual = std::max({r.primal_residual, lo[i], -hi[i]});
        }
        r.status = r.primal_residual <= st.eps_abs ? Status::Solved : Status::MaxIterations;
        return r;
    }
    const Matrix Aful = m == 0 ? Matrix(0, n) : A;

    Matrix Ps = P;
    Vector qs = q;
    Matrix As = Aful;
    const Scaling sc = equilibrate(Ps, qs, As, st.scaling_iters);
    Vector ls = sc.E.cwiseProduct(lo);
    Vector us = sc.E.cwiseProduct(hi);
    for (Eigen::Index i = 0; i < m; ++i) {
        if (lo[i] <= -kInfinity) ls[i] = -kInfinity;
        if (hi[i] >= kInfinity) us[i] = kInfinity;
    }

    double rho = st.rho;
    auto rho_vector = [&](double base) {
        Vector r(m);
        for (Eigen::Index i = 0; i < m; ++i) {
            if (lo[i] <= -kInfinity && hi[i] >= kInfinity) {
                r[i] = kRhoMin;
            } else if (lo[i] == hi[i]) {
                r[i] = kRhoEqScale * base;
            } else {
                r[i] = base;
            }
        }
        return r;
    };
    Vector rho_vec = rho_vector(rho);

    Eigen::LLT<Matrix> llt;
    auto factor = [&]() {
        Matrix K = Ps;
        K.diagonal().array() += st.sigma;
        if (m > 0) K.noalias() += As.transpose() * rho_vec.asDiagonal() * As;
        llt.compute(K);
        if (llt.info() != Eigen::Success) {
            throw Error(ErrorCode::NotPositiveDefinite, "QP matrix is not positive semidefinite");
        }
    };
    factor();

    Vector x = Vector::Zero(n);
    if (warm_x != nullptr && warm_x->size() == n && warm_x->allFinite()) {
        x = warm_x->cwiseQuotient(sc.D);
    }
    Vector z = project(As * x, ls, us);
    Vector y = Vector::Zero(m);

    const Vector Dinv = sc.D.cwiseInverse();
    const Vector Einv = sc.E.cwiseInverse();

    Result best;
    double best_score = std::numeric_limits<double>::infinity();
    auto record = [&](const Vector& xu, const Vector& yu, const Residuals& r, int iter) {
        best.x = xu;
        best.y = yu;
        best.primal_residual = r.prim;
        best.dual_residual = r.dual;
        best.iterations = iter;
        best_score = r.score();
    };

    auto try_polish = [&](int iter) -> bool {
        const Vector xu = sc.D.cwiseProduct(x);
        const Vector yu = sc.E.cwiseProduct(y) / sc.c;
        const Vector zu = Einv.cwiseProduct(z);
        Polished p = polish(P, q, Aful, lo, hi, zu, yu, st);
        if (!p.ok) return false;
        record(p.x, p.y, p.res, iter);
        best.polished = true;
        best.status = Status::Solved;
        return true;
    };

    bool done = false;
    for (int iter = 1; iter <= st.max_iter && !done; ++iter) {
        Vector rhs = st.sigma * x - qs;
        if (m > 0) rhs.noalias() += As.transpose() * (rho_vec.cwiseProduct(z) - y);
        const Vector xt = llt.solve(rhs);
        const Vector zt = As * xt;
        x = st.alpha * xt + (1.0 - st.alpha) * x;
        const Vector zr = st.alpha * zt + (1.0 - st.alpha) * z;
        z = project(zr + y.cwiseQuotient(rho_vec), ls, us);
        y += rho_vec.cwiseProduct(zr - z);

        // residuals of the unscaled problem
        const Vector ax = As * x;
        const Vector px = Ps * x;
        const Vector aty = As.transpose() * y;
        Residuals r;
        r.prim = inf_norm(Einv.cwiseProduct(ax - z));
        r.dual = inf_norm(Dinv.cwiseProduct(px + qs + aty)) / sc.c;
        r.eps_prim = st.eps_abs +
                     st.eps_rel * std::max(inf_norm(Einv.cwiseProduct(ax)), inf_norm(Einv.cwiseProduct(z)));
        r.eps_dual = st.eps_abs + st.eps_rel *
                                      std::max({inf_norm(Dinv.cwiseProduct(px)),
                                                inf_norm(Dinv.cwiseProduct(aty)),
                                                inf_norm(Dinv.cwiseProduct(qs))}) /
                                      sc.c;
        if (r.score() < best_score) {
            record(sc.D.cwiseProduct(x), sc.E.cwiseProduct(y) / sc.c, r, iter);
            best.polished = false;
        }
        if (r.converged()) {
            best.status = Status::Solved;
            if (st.polish) try_polish(iter);
            done = true;
            break;
        }
        if (st.polish && st.polish_interval > 0 && iter % st.polish_interval == 0 &&
            try_polish(iter)) {
            done = true;
            break;
        }

        if (st.adaptive_rho && m > 0 && iter % st.adaptive_rho_interval == 0) {
            const double prim_s = inf_norm(ax - z) / std::max({inf_norm(ax), inf_norm(z), 1e-30});
            const double dual_s = inf_norm(px + qs + aty) /
                                  std::max({inf_norm(px), inf_norm(aty), inf_norm(qs), 1e-30});
            double rho_new = rho * std::sqrt(prim_s / std::max(dual_s, 1e-30));
            rho_new = std::clamp(rho_new, kRhoMin, kRhoMax);
            if (rho_new > 5.0 * rho || rho_new < 0.2 * rho) {
                rho = rho_new;
                rho_vec = rho_vector(rho);
                factor();
            }
        }
    }
    if (!done && st.polish) try_polish(st.max_iter);

    best.objective = 0.5 * best.x.dot(P * best.x) + q.dot(best.x);
    return best;
}

}  // namespace funnelguard::qp
