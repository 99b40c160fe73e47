#pragma once

#include <span>
#include <vector>

#include "funnelguard/funnel.hpp"

namespace funnelguard::deepc {

/// Block Hankel matrix of depth L: column j stacks seq[j], ..., seq[j+L-1].
/// Shape (m L) x (N - L + 1). Throws TooShort when N < L.
[[nodiscard]] Matrix hankel(std::span<const Vector> seq, int depth);

/// Number of singular values above rel_tol * sigma_max.
[[nodiscard]] int numerical_rank(const Matrix& m, double rel_tol);

inline constexpr double kDefaultRankTol = 1e-9;

/// True iff H_L(seq) has full row rank m L (numerically).
[[nodiscard]] bool is_persistently_exciting(std::span<const Vector> seq, int order,
                                            double rank_tol = kDefaultRankTol);

struct HankelData {
    Matrix H_u;
    Matrix H_y;
    int depth = 0;
    int input_dim = 0;
    int output_dim = 0;
    std::vector<Vector> u_data;
    std::vector<Vector> y_data;
    int pe_order_checked = 0;
    bool pe_satisfied = false;

    [[nodiscard]] int columns() const noexcept { return static_cast<int>(H_u.cols()); }
};

/// Stacks input and output Hankels of the given depth and records the PE test at `pe_order`.
[[nodiscard]] HankelData make_hankel_data(std::span<const Vector> u, std::span<const Vector> y,
                                          int depth, int pe_order,
                                          double rank_tol = kDefaultRankTol);

/// Least-squares residual min_nu || [H_u; H_y] nu - [u; y] || for a candidate trajectory whose
/// length equals the Hankel depth.
[[nodiscard]] double fundamental_lemma_residual(std::span<const Vector> u,
                                                std::span<const Vector> y,
                                                const HankelData& hankel);

[[nodiscard]] double binomial(int n, int k);

/// Backward difference (1/tau^l) sum_j (-1)^j C(l, j) y_{i-j}. The history is in time order
/// and its last entry is y_i; at least l+1 entries are required.
[[nodiscard]] Vector backward_difference(std::span<const Vector> history, int order, double tau);

}  // namespace funnelguard::deepc
