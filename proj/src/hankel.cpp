#include "funnelguard/hankel.hpp"

#include <cmath>
#include <string>

#include "funnelguard/error.hpp"

namespace funnelguard::deepc {

Matrix hankel(std::span<const Vector> seq, int depth) {
    require(depth >= 1, ErrorCode::InvalidArgument, "Hankel depth must be >= 1");
    const int n = static_cast<int>(seq.size());
    if (n < depth) {
        throw Error(ErrorCode::TooShort, "sequence of length " + std::to_string(n) +
                                             " is shorter than depth " + std::to_string(depth));
    }
    const int m = static_cast<int>(seq.front().size());
    const int cols = n - depth + 1;
    Matrix h(m * depth, cols);
    for (int j = 0; j < cols; ++j) {
        for (int i = 0; i < depth; ++i) {
            const Vector& v = seq[static_cast<std::size_t>(i + j)];
            require(v.size() == m, ErrorCode::InvalidArgument, "sequence entries differ in size");
            h.block(i * m, j, m, 1) = v;
        }
    }
    return h;
}

int numerical_rank(const Matrix& m, double rel_tol) {
    if (m.size() == 0) return 0;
    const Eigen::BDCSVD<Matrix> svd(m);
    const auto& s = svd.singularValues();
    if (s.size() == 0 || !(s[0] > 0.0)) return 0;
    int rank = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        if (s[i] > rel_tol * s[0]) ++rank;
    }
    return rank;
}

bool is_persistently_exciting(std::span<const Vector> seq, int order, double rank_tol) {
    const Matrix h = hankel(seq, order);
    if (h.cols() < h.rows()) return false;
    return numerical_rank(h, rank_tol) == h.rows();
}

HankelData make_hankel_data(std::span<const Vector> u, std::span<const Vector> y, int depth,
                            int pe_order, double rank_tol) {
    require(u.size() == y.size(), ErrorCode::InvalidArgument,
            "input and output data differ in length");
    HankelData data;
    data.H_u = hankel(u, depth);
    data.H_y = hankel(y, depth);
    data.depth = depth;
    data.input_dim = static_cast<int>(u.front().size());
    data.output_dim = static_cast<int>(y.front().size());
    data.u_data.assign(u.begin(), u.end());
    data.y_data.assign(y.begin(), y.end());
    data.pe_order_checked = pe_order;
    data.pe_satisfied = static_cast<int>(u.size()) >= pe_order &&
                        is_persistently_exciting(u, pe_order, rank_tol);
    return data;
}

double fundamental_lemma_residual(std::span<const Vector> u, std::span<const Vector> y,
                                  const HankelData& hankel) {
    require(static_cast<int>(u.size()) == hankel.depth && static_cast<int>(y.size()) == hankel.depth,
            ErrorCode::InvalidArgument, "trajectory length must equal the Hankel depth");
    const Eigen::Index rows_u = hankel.H_u.rows();
    const Eigen::Index rows = rows_u + hankel.H_y.rows();
    Matrix h(rows, hankel.H_u.cols());
    h << hankel.H_u, hankel.H_y;
    Vector w(rows);
    for (int i = 0; i < hankel.depth; ++i) {
        w.segment(i * hankel.input_dim, hankel.input_dim) = u[static_cast<std::size_t>(i)];
        w.segment(rows_u + i * hankel.output_dim, hankel.output_dim) = y[static_cast<std::size_t>(i)];
    }
    // project onto the numerical column space
    const Eigen::BDCSVD<Matrix> svd(h, Eigen::ComputeThinU);
    const auto& s = svd.singularValues();
    Eigen::Index rank = 0;
    while (rank < s.size() && s[rank] > 1e-10 * s[0]) ++rank;
    const Matrix basis = svd.matrixU().leftCols(rank);
    return (w - basis * (basis.transpose() * w)).norm();
}

double binomial(int n, int k) {
    if (k < 0 || k > n) return 0.0;
    double c = 1.0;
    for (int i = 1; i <= k; ++i) c = c * (n - k + i) / i;
    return std::round(c);
}

Vector backward_difference(std::span<const Vector> history, int order, double tau) {
    require(order >= 0, ErrorCode::InvalidArgument, "difference order must be >= 0");
    if (static_cast<int>(history.size()) < order + 1) {
        throw Error(ErrorCode::InsufficientHistory,
                    "order-" + std::to_string(order) + " difference needs " +
                        std::to_string(order + 1) + " samples, got " +
                        std::to_string(history.size()));
    }
    require(tau > 0.0, ErrorCode::InvalidArgument, "tau must be positive");
    const std::size_t last = history.size() - 1;
    Vector acc = Vector::Zero(history[last].size());
    for (int j = 0; j <= order; ++j) {
        const double sign = (j % 2 == 0) ? 1.0 : -1.0;
        acc += sign * binomial(order, j) * history[last - static_cast<std::size_t>(j)];
    }
    return acc / std::pow(tau, order);
}

}  // namespace funnelguard::deepc
