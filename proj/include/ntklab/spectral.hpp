#pragma once

#include <cstddef>
#include <filesystem>
#include <string>

#include "ntklab/kernel.hpp"
#include "ntklab/types.hpp"

namespace ntk {

// Eigenpairs of a Gram matrix in the empirical-measure normalization:
// lambda_j = mu_j / m for raw Gram eigenvalues mu_j, and phi_j = sqrt(m) u_j
// for unit eigenvectors u_j, so (1/m) <phi_j, phi_k> = delta_jk and the
// alignment of phi_j equals lambda_j.
struct EigenSystem {
    Vector eigenvalues;   // lambda_1 >= ... >= lambda_m
    Matrix eigenfunctions;  // column j holds phi_j evaluated on the samples
    std::string gram_dataset_fingerprint;
    std::string gram_network_fingerprint;

    std::size_t size() const { return static_cast<std::size_t>(eigenvalues.size()); }
    double raw_eigenvalue(std::size_t j) const { return eigenvalues[static_cast<Eigen::Index>(j)] * static_cast<double>(size()); }
    // Unit-norm Gram eigenvector u_j (0-based column index).
    Vector unit_vector(std::size_t j) const;
    // phi_j for the 1-based index j used throughout the experiments.
    Vector eigenfunction(std::size_t j) const;
};

// Full symmetric eigendecomposition. Eigenvalues are sorted decreasingly;
// each eigenvector has its first nonzero coordinate (|u_i| > 1e-12) positive,
// and eigenvectors of exactly tied eigenvalues are ordered lexicographically
// (largest first). Eigenvalues in [-1e-10 lambda_1, 0) are clamped to 0.
EigenSystem eigendecompose(const GramMatrix& gram);

// sign(phi_j) with sign(0) := +1; j is 1-based.
Vector binarize_eigenfunction(const EigenSystem& eig, std::size_t j);

// |<phi_j, sign phi_j>| / (||phi_j|| ||sign phi_j||); j is 1-based.
double binarization_overlap(const EigenSystem& eig, std::size_t j);

inline constexpr std::size_t kDefaultTopK = 50;

// ||P_K y|| / ||y|| for the projector onto the top-K unit eigenvectors.
double energy_concentration(const EigenSystem& eig, VectorRef y, std::size_t k = kDefaultTopK);

// Phi as an NTKG square file (row j = phi_j), lambda as a headerless f64
// array (<stem>.lambda.bin) and a JSON manifest (<stem>.json).
void save_eigensystem(const std::filesystem::path& stem, const EigenSystem& eig);
EigenSystem load_eigensystem(const std::filesystem::path& stem);

}  // namespace ntk
