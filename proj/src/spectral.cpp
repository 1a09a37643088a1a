#include "ntklab/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <Eigen/Eigenvalues>

#include "ntklab/binio.hpp"
#include "ntklab/errors.hpp"

namespace ntk {

namespace {

constexpr double kZeroCoordinate = 1e-12;
constexpr double kTieTolerance = 1e-12;
constexpr double kClampTolerance = 1e-10;

void check_index(const EigenSystem& eig, std::size_t j) {
    if (j < 1 || j > eig.size())
        throw ConfigError("eigenfunction index " + std::to_string(j) + " outside [1, " + std::to_string(eig.size()) + "]");
}

}  // namespace

Vector EigenSystem::unit_vector(std::size_t j) const {
    return eigenfunctions.col(static_cast<Eigen::Index>(j)) / std::sqrt(static_cast<double>(size()));
}

Vector EigenSystem::eigenfunction(std::size_t j) const {
    check_index(*this, j);
    return eigenfunctions.col(static_cast<Eigen::Index>(j - 1));
}

EigenSystem eigendecompose(const GramMatrix& gram) {
    const auto m = static_cast<Eigen::Index>(gram.size());
    if (m == 0 || gram.values.cols() != m) throw DimensionError("eigendecompose: gram must be square and nonempty");
    Eigen::SelfAdjointEigenSolver<Matrix> solver(gram.values, Eigen::ComputeEigenvectors);
    if (solver.info() != Eigen::Success)
        throw NumericalError("eigendecompose: symmetric eigensolver did not converge");

    // Eigen returns ascending order.
    Vector mu = solver.eigenvalues().reverse();
    Matrix u = solver.eigenvectors().rowwise().reverse();
    const double top = std::max(mu[0], 0.0);
    if (mu[m - 1] < -1e-8 * top)
        throw NumericalError("eigendecompose: gram is not positive semi-definite (min eigenvalue " +
                             std::to_string(mu[m - 1]) + ")");

    for (Eigen::Index j = 0; j < m; ++j) {
        if (mu[j] < 0.0 && mu[j] >= -kClampTolerance * top) mu[j] = 0.0;
        for (Eigen::Index i = 0; i < m; ++i) {
            if (std::abs(u(i, j)) > kZeroCoordinate) {
                if (u(i, j) < 0.0) u.col(j) *= -1.0;
                break;
            }
        }
    }

    // Within each run of tied eigenvalues, order eigenvectors lexicographically.
    std::vector<Eigen::Index> order(static_cast<std::size_t>(m));
    std::iota(order.begin(), order.end(), 0);
    auto lex_greater = [&](Eigen::Index a, Eigen::Index b) {
        for (Eigen::Index i = 0; i < m; ++i) {
            if (u(i, a) != u(i, b)) return u(i, a) > u(i, b);
        }
        return false;
    };
    Eigen::Index run_start = 0;
    for (Eigen::Index j = 1; j <= m; ++j) {
        const bool tied = j < m && std::abs(mu[j] - mu[run_start]) <= kTieTolerance * std::max(top, 1e-300);
        if (tied) continue;
        if (j - run_start > 1) std::stable_sort(order.begin() + run_start, order.begin() + j, lex_greater);
        run_start = j;
    }

    EigenSystem eig;
    eig.eigenvalues.resize(m);
    eig.eigenfunctions.resize(m, m);
    const double md = static_cast<double>(m);
    const double root_m = std::sqrt(md);
    for (Eigen::Index j = 0; j < m; ++j) {
        const auto src = order[static_cast<std::size_t>(j)];
        // Values stay in solver order; only vectors inside a tie run are permuted.
        eig.eigenvalues[j] = mu[j] / md;
        eig.eigenfunctions.col(j) = u.col(src) * root_m;
    }
    eig.gram_dataset_fingerprint = gram.dataset_fingerprint;
    eig.gram_network_fingerprint = gram.network_fingerprint;
    return eig;
}

Vector binarize_eigenfunction(const EigenSystem& eig, std::size_t j) {
    const Vector phi = eig.eigenfunction(j);
    return phi.unaryExpr([](double v) { return v >= 0.0 ? 1.0 : -1.0; });
}

double binarization_overlap(const EigenSystem& eig, std::size_t j) {
    const Vector phi = eig.eigenfunction(j);
    const Vector s = binarize_eigenfunction(eig, j);
    const double denom = phi.norm() * s.norm();
    if (denom == 0.0) return 0.0;
    return std::abs(phi.dot(s)) / denom;
}

double energy_concentration(const EigenSystem& eig, VectorRef y, std::size_t k) {
    const auto m = eig.size();
    if (k < 1 || k > m) throw ConfigError("energy concentration: K must lie in [1, " + std::to_string(m) + "]");
    require_dims(static_cast<std::size_t>(y.size()) == m, "label length vs eigensystem size");
    const double ynorm = y.norm();
    if (ynorm == 0.0) throw NumericalError("energy concentration: zero label vector");
    const auto kk = static_cast<Eigen::Index>(k);
    const Vector proj = eig.eigenfunctions.leftCols(kk).transpose() * y / std::sqrt(static_cast<double>(m));
    return std::min(1.0, proj.norm() / ynorm);
}

void save_eigensystem(const std::filesystem::path& stem, const EigenSystem& eig) {
    const auto base = stem.string();
    binio::write_square(base + ".phi.bin", "NTKG", eig.eigenfunctions.transpose());
    binio::write_f64_array(base + ".lambda.bin", eig.eigenvalues);
    nlohmann::json side;
    side["m"] = eig.size();
    side["normalization"] = "lambda_j = mu_j / m; phi_j = sqrt(m) u_j; row j of phi file is phi_j";
    side["gram_dataset_fingerprint"] = eig.gram_dataset_fingerprint;
    side["gram_network_fingerprint"] = eig.gram_network_fingerprint;
    side["phi_file"] = std::filesystem::path(base + ".phi.bin").filename().string();
    side["lambda_file"] = std::filesystem::path(base + ".lambda.bin").filename().string();
    std::ofstream(base + ".json") << side.dump(2) << '\n';
}

EigenSystem load_eigensystem(const std::filesystem::path& stem) {
    const auto base = stem.string();
    EigenSystem eig;
    eig.eigenfunctions = binio::read_square(base + ".phi.bin", "NTKG").transpose();
    eig.eigenvalues = binio::read_f64_array(base + ".lambda.bin");
    if (eig.eigenvalues.size() != eig.eigenfunctions.rows()) throw DataError("eigensystem: lambda/phi size mismatch");
    std::ifstream in(base + ".json");
    if (in) {
        nlohmann::json side;
        try {
            in >> side;
        } catch (const nlohmann::json::exception& e) {
            throw DataError("corrupt eigensystem manifest: " + std::string(e.what()));
        }
        eig.gram_dataset_fingerprint = side.value("gram_dataset_fingerprint", "");
        eig.gram_network_fingerprint = side.value("gram_network_fingerprint", "");
    }
    return eig;
}

}  // namespace ntk
