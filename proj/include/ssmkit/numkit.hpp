#pragma once

#include <Eigen/Dense>

#include <string_view>
#include <vector>

namespace ssm::numkit {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Monomial exponent table in graded lexicographic order: ascending total
/// degree, and within a degree x1 is preferred (x1^2, x1 x2, x2^2, ...).
class PolynomialBasis {
public:
    PolynomialBasis() = default;
    PolynomialBasis(int dim, int lo, int hi);

    int dim() const noexcept { return dim_; }
    int lo() const noexcept { return lo_; }
    int hi() const noexcept { return hi_; }
    int size() const noexcept { return static_cast<int>(exponents_.size()); }
    bool empty() const noexcept { return exponents_.empty(); }
    const std::vector<std::vector<int>>& exponents() const noexcept { return exponents_; }

    /// Number of monomials of exact total degree d in dim variables.
    static long count_of_degree(int dim, int d);

private:
    int dim_ = 0;
    int lo_ = 1;
    int hi_ = 0;
    std::vector<std::vector<int>> exponents_;
};

/// Tag written into serialized models; bump if the ordering ever changes.
inline constexpr std::string_view kMonomialOrdering = "graded-lex-v1";

Vector monomials(const Vector& x, const PolynomialBasis& basis);
/// Column-wise monomials of a snapshot matrix (dim x N) -> (size x N).
Matrix monomials(const Matrix& X, const PolynomialBasis& basis);
/// d monomials / dx, shape (size x dim).
Matrix monomial_jacobian(const Vector& x, const PolynomialBasis& basis);

struct LeastSquaresOptions {
    double ridge = 0.0;
};

/// X minimizing ||B - X A||_F for A (p x N) and B (q x N).
Matrix least_squares(const Matrix& A, const Matrix& B, const LeastSquaresOptions& opts = {});

/// Leading n left singular vectors, each signed so its largest-magnitude entry is positive.
Matrix truncated_svd(const Matrix& Y, int n);

/// Solves A_TT V - V A_NN = -A_TN by Bartels-Stewart.
/// Throws SpectralGapViolation when the two spectra are not separated by
/// more than 1e-8 times the largest spectral radius.
Matrix sylvester_solve(const Matrix& A_TT, const Matrix& A_NN, const Matrix& A_TN);

/// Second-order finite differences along columns (uniform spacing dt).
Matrix finite_difference(const Matrix& Y, double dt);

/// Column k stacks y(t_{k+s}), y(t_{k+s-lag}), ..., y(t_k) with span s = d*lag;
/// result is q(d+1) x (N-s).
Matrix delay_embed(const Matrix& Y, int d, int lag = 1);

/// Orthonormal basis of the orthogonal complement of range(V); V must be orthonormal.
Matrix orthonormal_complement(const Matrix& V);

/// Flips each column so its largest-magnitude entry is positive.
void fix_column_signs(Matrix& V);

/// Largest principal angle (radians) between the column spans of U and V.
double max_principal_angle(const Matrix& U, const Matrix& V);

/// Orthonormal basis of range(V) via Householder QR (V full column rank).
Matrix orthonormalize(const Matrix& V);

void require_finite(const Matrix& M, std::string_view what);

/// Compensated (Neumaier) sum of squares of all entries.
double squared_norm(const Matrix& M);

}  // namespace ssm::numkit
