#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>

#include "ntklab/dataset.hpp"
#include "ntklab/netcore.hpp"
#include "ntklab/types.hpp"

namespace ntk {

struct EigenSystem;

// m x m empirical NTK Gram matrix G_ij = <grad f(x_i), grad f(x_j)>.
struct GramMatrix {
    Matrix values;
    std::string dataset_fingerprint;
    std::string network_fingerprint;

    std::size_t size() const { return static_cast<std::size_t>(values.rows()); }

    // Throws NumericalError unless max|G - G^T| <= 1e-9 max|G| and
    // min eigenvalue >= -1e-8 max eigenvalue.
    void check_invariants() const;
};

struct GramOptions {
    std::size_t block_size = 256;
    std::size_t max_samples = 20000;
    unsigned threads = 1;
};

double ntk_value(const NetworkSpec& spec, const ParamVector& params, VectorRef x, VectorRef x_prime);

// Row/column blocked Gram; only blocks on or above the diagonal are formed and
// then mirrored, so the result is exactly symmetric. Any thread count yields
// the same bits.
GramMatrix gram(const NetworkSpec& spec, const ParamVector& params, const RowMatrix& samples,
                const GramOptions& options = {});
GramMatrix gram(const NetworkSpec& spec, const ParamVector& params, const Dataset& dataset,
                const GramOptions& options = {});

// ||(1/m) sum_i f(x_i) grad f(x_i)||^2, from Jacobian sweeps without a Gram matrix.
double alignment(const NetworkSpec& spec, const ParamVector& params, const RowMatrix& samples, VectorRef f_values);

// Alignment of every column of `f_columns` (m x P) in one Jacobian sweep.
Vector alignments(const NetworkSpec& spec, const ParamVector& params, const RowMatrix& samples,
                  const Matrix& f_columns);

// (1/m^2) f^T G f.
double alignment_from_gram(const GramMatrix& gram, VectorRef f_values);

// sqrt((1/m) sum f_i^2).
double empirical_l2_norm(VectorRef f_values);

// ||f||_2^4 / alpha; throws NumericalError when alpha <= 0.
double rkhs_norm_lower_bound(double alpha, double l2_norm);

struct RkhsNorm {
    double value = 0.0;
    double residual_fraction = 0.0;  // energy of f outside the retained eigenvectors
    std::size_t terms = 0;
};

inline constexpr double kEigenCutoff = 1e-10;
inline constexpr double kMaxResidualFraction = 0.01;

// sum_j <phi_j, f>_emp^2 / lambda_j over lambda_j > cutoff * lambda_1. Throws
// NumericalError when more than 1% of ||f||^2 lies outside the retained span.
RkhsNorm rkhs_norm_empirical(const EigenSystem& eig, VectorRef f_values, double cutoff = kEigenCutoff);

struct BoundTerms {
    double rkhs_norm = 0.0;
    double mean_self_kernel = 0.0;
    double bound_term = 0.0;
};

// Measurable ingredients of the kernel generalization bound:
// bound_term = sqrt(rkhs_norm * trace(G)/m / m).
BoundTerms generalization_bound_terms(const EigenSystem& eig, const GramMatrix& gram, VectorRef f_values,
                                      std::size_t m);

struct AlignmentReport {
    double alignment = 0.0;
    double l2_norm = 0.0;
    double rkhs_lower_bound = 0.0;  // infinite when alignment == 0
    std::optional<double> rkhs_norm;
    std::optional<double> bound_term;
};

AlignmentReport alignment_report(const NetworkSpec& spec, const ParamVector& params, const RowMatrix& samples,
                                 VectorRef f_values, const EigenSystem* eig = nullptr,
                                 const GramMatrix* gram = nullptr);

// NTKG binary plus a <path>.json sidecar with fingerprints.
void save_gram(const std::filesystem::path& path, const GramMatrix& gram);
GramMatrix load_gram(const std::filesystem::path& path);

}  // namespace ntk
