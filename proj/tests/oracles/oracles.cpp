#include "oracles.hpp"

#include <algorithm>
#include <cmath>

namespace oracle {

double bisect(const std::function<double(double)>& f, double lo, double hi, int iters) {
    for (int i = 0; i < iters; ++i) {
        const double mid = 0.5 * (lo + hi);
        (f(mid) < 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

Vec rk4(const Ode& f, Vec x, double t0, double t1, int steps) {
    const double h = (t1 - t0) / steps;
    for (int i = 0; i < steps; ++i) {
        const double t = t0 + i * h;
        const Vec k1 = f(t, x);
        const Vec k2 = f(t + h / 2, x + h / 2 * k1);
        const Vec k3 = f(t + h / 2, x + h / 2 * k2);
        const Vec k4 = f(t + h, x + h * k3);
        x += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
    }
    return x;
}

Vec mass_on_car_rhs(const Vec& x, double u, double m1, double m2, double theta, double k,
                    double d) {
    // [a b; b c] (z'', s'') = (u, -k s - d s')
    const double a = m1 + m2;
    const double b = m2 * std::cos(theta);
    const double c = m2;
    const double f1 = u;
    const double f2 = -k * x[1] - d * x[3];
    const double det = a * c - b * b;
    Vec dx(4);
    dx << x[2], x[3], (f1 * c - b * f2) / det, (a * f2 - b * f1) / det;
    return dx;
}

BoxQp random_qp(std::mt19937_64& rng, int dim, int rows, bool equalities) {
    std::normal_distribution<double> n01;
    std::uniform_real_distribution<double> u01;
    BoxQp qp;
    const Mat M = Mat::NullaryExpr(dim, dim, [&] { return n01(rng); });
    qp.P = M.transpose() * M / dim + 0.1 * Mat::Identity(dim, dim);
    qp.q = Vec::NullaryExpr(dim, [&] { return 3.0 * n01(rng); });
    if (rows < 0) {
        qp.A = Mat::Identity(dim, dim);
        rows = dim;
    } else {
        qp.A = Mat::NullaryExpr(rows, dim, [&] { return n01(rng); });
    }
    // bounds around A x0 keep the problem feasible
    const Vec x0 = Vec::NullaryExpr(dim, [&] { return 0.3 * n01(rng); });
    const Vec ax = qp.A * x0;
    qp.l.resize(rows);
    qp.u.resize(rows);
    for (int i = 0; i < rows; ++i) {
        const double kind = u01(rng);
        qp.l[i] = ax[i] - 0.1 - u01(rng);
        qp.u[i] = ax[i] + 0.1 + u01(rng);
        if (kind < 0.15) qp.l[i] = -1e30;
        else if (kind < 0.3) qp.u[i] = 1e30;
        else if (equalities && kind < 0.36) qp.l[i] = qp.u[i] = ax[i];
    }
    return qp;
}

double qp_objective(const BoxQp& qp, const Vec& x) {
    return 0.5 * x.dot(qp.P * x) + qp.q.dot(x);
}

double qp_infeasibility(const BoxQp& qp, const Vec& x) {
    const Vec ax = qp.A * x;
    double worst = 0.0;
    for (Eigen::Index i = 0; i < ax.size(); ++i) {
        worst = std::max({worst, qp.l[i] - ax[i], ax[i] - qp.u[i]});
    }
    return worst;
}

namespace {

bool is_identity(const Mat& A) {
    return A.rows() == A.cols() && (A - Mat::Identity(A.rows(), A.cols())).norm() == 0.0;
}

QpReference primal_projected_gradient(const BoxQp& qp, long max_iters, double tol) {
    const Eigen::SelfAdjointEigenSolver<Mat> es(qp.P);
    const double step = 1.0 / es.eigenvalues().maxCoeff();
    auto project = [&](Vec x) {
        return x.cwiseMax(qp.l).cwiseMin(qp.u).eval();
    };
    Vec x = project(Vec::Zero(qp.q.size()));
    Vec x_prev = x;
    Vec z = x;
    double t = 1.0;
    QpReference ref;
    for (long it = 0; it < max_iters; ++it) {
        const Vec grad = qp.P * z + qp.q;
        x_prev = x;
        x = project(z - step * grad);
        // restart momentum whenever it points uphill
        if ((z - x).dot(x - x_prev) > 0.0) t = 1.0;
        const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        z = x + ((t - 1.0) / t_next) * (x - x_prev);
        t = t_next;
        ref.iterations = it + 1;
        if ((x - x_prev).norm() < tol) break;
    }
    ref.x = x;
    ref.objective = qp_objective(qp, x);
    // convexity: f(x*) >= f(x) + min over the box of g'(x' - x)
    const Vec g = qp.P * x + qp.q;
    double bound = ref.objective;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        bound += std::min(g[i] * (qp.l[i] - x[i]), g[i] * (qp.u[i] - x[i]));
    }
    ref.dual_bound = bound;
    return ref;
}

QpReference dual_projected_gradient(const BoxQp& qp, long max_iters, double tol) {
    // max_{w, v >= 0} -1/2 (q + A'(w - v))' P^{-1} (q + A'(w - v)) - u'w + l'v,
    // restricted to the finite bounds
    const Eigen::LLT<Mat> llt(qp.P);
    std::vector<int> up;
    std::vector<int> lo;
    for (Eigen::Index i = 0; i < qp.A.rows(); ++i) {
        if (qp.u[i] < 1e29) up.push_back(static_cast<int>(i));
        if (qp.l[i] > -1e29) lo.push_back(static_cast<int>(i));
    }
    const int nu = static_cast<int>(up.size());
    const int nl = static_cast<int>(lo.size());
    Mat G(nu + nl, qp.A.cols());
    Vec c(nu + nl);
    for (int i = 0; i < nu; ++i) {
        G.row(i) = qp.A.row(up[i]);
        c[i] = qp.u[up[i]];
    }
    for (int i = 0; i < nl; ++i) {
        G.row(nu + i) = -qp.A.row(lo[i]);
        c[nu + i] = -qp.l[lo[i]];
    }
    // constraints G x <= c with multipliers y >= 0; x(y) = -P^{-1}(q + G'y)
    const Mat PinvGt = llt.solve(G.transpose());
    const Mat K = G * PinvGt;
    const Vec Pinvq = llt.solve(qp.q);
    const Vec h = G * Pinvq + c;
    const Eigen::SelfAdjointEigenSolver<Mat> es(K);
    const double step = 1.0 / std::max(es.eigenvalues().maxCoeff(), 1e-12);
    auto dual = [&](const Vec& y) { return -0.5 * y.dot(K * y) - h.dot(y); };
    Vec y = Vec::Zero(nu + nl);
    Vec y_prev = y;
    Vec z = y;
    double t = 1.0;
    QpReference ref;
    for (long it = 0; it < max_iters; ++it) {
        const Vec grad = -(K * z) - h;
        y_prev = y;
        y = (z + step * grad).cwiseMax(0.0);
        if ((z - y).dot(y - y_prev) > 0.0) t = 1.0;
        const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        z = y + ((t - 1.0) / t_next) * (y - y_prev);
        t = t_next;
        ref.iterations = it + 1;
        if ((y - y_prev).norm() < tol) break;
    }
    ref.x = -(Pinvq + PinvGt * y);
    ref.objective = qp_objective(qp, ref.x);
    ref.dual_bound = dual(y) - 0.5 * qp.q.dot(Pinvq);
    return ref;
}

}  // namespace

QpReference projected_gradient(const BoxQp& qp, long max_iters, double tol) {
    return is_identity(qp.A) ? primal_projected_gradient(qp, max_iters, tol)
                             : dual_projected_gradient(qp, max_iters, tol);
}

Lti random_lti(std::mt19937_64& rng, int n, int m, int p) {
    std::normal_distribution<double> n01;
    for (;;) {
        Lti sys;
        sys.A = Mat::NullaryExpr(n, n, [&] { return n01(rng); });
        const double rho = sys.A.eigenvalues().cwiseAbs().maxCoeff();
        if (rho > 0.0) sys.A *= 0.9 / rho;
        sys.B = Mat::NullaryExpr(n, m, [&] { return n01(rng); });
        sys.C = Mat::NullaryExpr(p, n, [&] { return n01(rng); });
        sys.D = Mat::NullaryExpr(p, m, [&] { return 0.5 * n01(rng); });
        Mat ctrb(n, n * m);
        Mat obsv(n * p, n);
        Mat Ak = Mat::Identity(n, n);
        for (int k = 0; k < n; ++k) {
            ctrb.middleCols(k * m, m) = Ak * sys.B;
            obsv.middleRows(k * p, p) = sys.C * Ak;
            Ak = Ak * sys.A;
        }
        const Eigen::JacobiSVD<Mat> sc(ctrb);
        const Eigen::JacobiSVD<Mat> so(obsv);
        const auto sv_c = sc.singularValues();
        const auto sv_o = so.singularValues();
        if (sv_c[n - 1] > 1e-3 * sv_c[0] && sv_o[n - 1] > 1e-3 * sv_o[0]) return sys;
    }
}

Signals simulate(const Lti& sys, const Vec& x0, const std::vector<Vec>& u) {
    Signals s;
    Vec x = x0;
    for (const Vec& uk : u) {
        s.u.push_back(uk);
        s.y.push_back(sys.C * x + sys.D * uk);
        x = sys.A * x + sys.B * uk;
    }
    return s;
}

std::vector<Vec> uniform_signal(std::mt19937_64& rng, int length, int dim, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<Vec> seq;
    for (int k = 0; k < length; ++k) seq.push_back(Vec::NullaryExpr(dim, [&] { return dist(rng); }));
    return seq;
}

int hankel_rank(const std::vector<Vec>& seq, int depth, double rel_tol) {
    const int m = static_cast<int>(seq.front().size());
    const int cols = static_cast<int>(seq.size()) - depth + 1;
    if (cols <= 0) return 0;
    Mat H(m * depth, cols);
    for (int j = 0; j < cols; ++j) {
        for (int i = 0; i < depth; ++i) H.block(i * m, j, m, 1) = seq[j + i];
    }
    const Eigen::JacobiSVD<Mat> svd(H);
    const auto sv = svd.singularValues();
    int rank = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i) {
        if (sv[i] > rel_tol * sv[0]) ++rank;
    }
    return rank;
}

int Mdp::step(int s, int a, std::mt19937_64& rng) const {
    const auto& dist = P[s][a];
    std::discrete_distribution<int> pick(dist.begin(), dist.end());
    return pick(rng);
}

Mdp three_state_mdp() {
    Mdp mdp;
    mdp.P = {
        {{0.7, 0.2, 0.1}, {0.1, 0.6, 0.3}},
        {{0.3, 0.4, 0.3}, {0.0, 0.2, 0.8}},
        {{0.5, 0.0, 0.5}, {0.2, 0.7, 0.1}},
    };
    mdp.R = {{-1.0, -0.5}, {0.0, -2.0}, {-0.3, -0.1}};
    // with 1/n step sizes the error decays like n^-(1-gamma), so keep gamma small
    mdp.gamma = 0.3;
    return mdp;
}

Mat value_iteration(const Mdp& mdp, double tol) {
    const int S = mdp.states();
    const int A = mdp.actions();
    Mat Q = Mat::Zero(S, A);
    for (;;) {
        const Vec V = Q.rowwise().maxCoeff();
        Mat next(S, A);
        for (int s = 0; s < S; ++s) {
            for (int a = 0; a < A; ++a) {
                double ev = 0.0;
                for (int s2 = 0; s2 < S; ++s2) ev += mdp.P[s][a][s2] * V[s2];
                next(s, a) = mdp.R[s][a] + mdp.gamma * ev;
            }
        }
        const double change = (next - Q).cwiseAbs().maxCoeff();
        Q = next;
        if (change < tol) return Q;
    }
}

double observed_order(double err_h, double err_h2) { return std::log2(err_h / err_h2); }

}  // namespace oracle
