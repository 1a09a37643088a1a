#include "ntklab/kernel.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include <Eigen/Eigenvalues>

#include "ntklab/binio.hpp"
#include "ntklab/errors.hpp"
#include "ntklab/parallel.hpp"
#include "ntklab/spectral.hpp"

namespace ntk {

void GramMatrix::check_invariants() const {
    if (values.rows() != values.cols()) throw NumericalError("gram: matrix is not square");
    const double scale = values.cwiseAbs().maxCoeff();
    const double asym = (values - values.transpose()).cwiseAbs().maxCoeff();
    if (asym > 1e-9 * scale) throw NumericalError("gram: symmetry violated (" + std::to_string(asym) + ")");
    Eigen::SelfAdjointEigenSolver<Matrix> solver(values, Eigen::EigenvaluesOnly);
    if (solver.info() != Eigen::Success) throw NumericalError("gram: eigenvalue computation failed");
    const auto& ev = solver.eigenvalues();
    if (ev.minCoeff() < -1e-8 * std::max(ev.maxCoeff(), 0.0))
        throw NumericalError("gram: not positive semi-definite (min eigenvalue " + std::to_string(ev.minCoeff()) + ")");
}

double ntk_value(const NetworkSpec& spec, const ParamVector& params, VectorRef x, VectorRef x_prime) {
    return param_jacobian(spec, params, x).dot(param_jacobian(spec, params, x_prime));
}

GramMatrix gram(const NetworkSpec& spec, const ParamVector& params, const RowMatrix& samples,
                const GramOptions& options) {
    const auto m = static_cast<std::size_t>(samples.rows());
    if (m == 0) throw DataError("gram: empty dataset");
    if (m > options.max_samples)
        throw ConfigError("gram: " + std::to_string(m) + " samples exceeds the configured cap of " +
                          std::to_string(options.max_samples));
    if (options.block_size == 0) throw ConfigError("gram: block size must be positive");

    const std::size_t bs = options.block_size;
    const std::size_t blocks = (m + bs - 1) / bs;
    auto block_range = [&](std::size_t b) {
        const auto begin = b * bs;
        return std::pair{static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(std::min(bs, m - begin))};
    };

    RowMatrix jac(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(params.size()));
    parallel_for(blocks, options.threads, [&](std::size_t b) {
        const auto [begin, len] = block_range(b);
        jac.middleRows(begin, len) = jacobian_matrix(spec, params, samples.middleRows(begin, len));
    });

    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t bi = 0; bi < blocks; ++bi)
        for (std::size_t bj = bi; bj < blocks; ++bj) pairs.emplace_back(bi, bj);

    GramMatrix g;
    g.values.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
    parallel_for(pairs.size(), options.threads, [&](std::size_t p) {
        const auto [bi, bj] = pairs[p];
        const auto [ri, li] = block_range(bi);
        const auto [rj, lj] = block_range(bj);
        // Row-pair dot products keep every entry's summation order fixed, so the
        // bits do not depend on block size or thread count.
        for (Eigen::Index i = ri; i < ri + li; ++i)
            for (Eigen::Index j = std::max(i, rj); j < rj + lj; ++j) g.values(i, j) = jac.row(i).dot(jac.row(j));
    });
    for (Eigen::Index j = 0; j < g.values.cols(); ++j)
        for (Eigen::Index i = j + 1; i < g.values.rows(); ++i) g.values(i, j) = g.values(j, i);

    g.dataset_fingerprint = fingerprint_samples(samples);
    g.network_fingerprint = params.fingerprint();
    return g;
}

GramMatrix gram(const NetworkSpec& spec, const ParamVector& params, const Dataset& dataset,
                const GramOptions& options) {
    return gram(spec, params, dataset.samples, options);
}

Vector alignments(const NetworkSpec& spec, const ParamVector& params, const RowMatrix& samples,
                  const Matrix& f_columns) {
    require_dims(f_columns.rows() == samples.rows(), "target length vs sample count");
    if (samples.rows() == 0) throw DataError("alignment: empty dataset");
    const auto n = static_cast<Eigen::Index>(params.size());
    Matrix acc = Matrix::Zero(n, f_columns.cols());
    Vector jac(n);
    for (Eigen::Index i = 0; i < samples.rows(); ++i) {
        param_jacobian_into(spec, params, samples.row(i).transpose(), jac);
        acc.noalias() += jac * f_columns.row(i);
    }
    acc /= static_cast<double>(samples.rows());
    return acc.colwise().squaredNorm().transpose();
}

double alignment(const NetworkSpec& spec, const ParamVector& params, const RowMatrix& samples, VectorRef f_values) {
    require_dims(f_values.size() == samples.rows(), "target length vs sample count");
    return alignments(spec, params, samples, Matrix(f_values))[0];
}

double alignment_from_gram(const GramMatrix& gram, VectorRef f_values) {
    require_dims(static_cast<std::size_t>(f_values.size()) == gram.size(), "target length vs gram size");
    const double m = static_cast<double>(gram.size());
    return f_values.dot(gram.values * f_values) / (m * m);
}

double empirical_l2_norm(VectorRef f_values) {
    if (f_values.size() == 0) return 0.0;
    return std::sqrt(f_values.squaredNorm() / static_cast<double>(f_values.size()));
}

double rkhs_norm_lower_bound(double alpha, double l2_norm) {
    if (!(alpha > 0.0)) throw NumericalError("rkhs bound undefined for non-positive alignment");
    const double sq = l2_norm * l2_norm;
    return sq * sq / alpha;
}

RkhsNorm rkhs_norm_empirical(const EigenSystem& eig, VectorRef f_values, double cutoff) {
    const auto m = static_cast<Eigen::Index>(eig.size());
    require_dims(f_values.size() == m, "target length vs eigensystem size");
    const double md = static_cast<double>(m);
    // <phi_j, f>_emp for every j.
    const Vector coeff = eig.eigenfunctions.transpose() * f_values / md;
    const double total = f_values.squaredNorm() / md;
    const double threshold = cutoff * eig.eigenvalues[0];
    RkhsNorm out;
    double captured = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) {
        const double lam = eig.eigenvalues[j];
        if (!(lam > threshold)) continue;
        out.value += coeff[j] * coeff[j] / lam;
        captured += coeff[j] * coeff[j];
        ++out.terms;
    }
    out.residual_fraction = total > 0.0 ? std::max(0.0, 1.0 - captured / total) : 0.0;
    if (out.residual_fraction > kMaxResidualFraction)
        throw NumericalError("rkhs norm: " + std::to_string(100.0 * out.residual_fraction) +
                             "% of the target energy lies outside the retained eigenvectors");
    return out;
}

BoundTerms generalization_bound_terms(const EigenSystem& eig, const GramMatrix& gram, VectorRef f_values,
                                      std::size_t m) {
    if (m == 0) throw ConfigError("bound terms: m must be positive");
    BoundTerms t;
    t.rkhs_norm = rkhs_norm_empirical(eig, f_values).value;
    t.mean_self_kernel = gram.values.trace() / static_cast<double>(gram.size());
    t.bound_term = std::sqrt(t.rkhs_norm * t.mean_self_kernel / static_cast<double>(m));
    return t;
}

AlignmentReport alignment_report(const NetworkSpec& spec, const ParamVector& params, const RowMatrix& samples,
                                 VectorRef f_values, const EigenSystem* eig, const GramMatrix* gram) {
    AlignmentReport r;
    r.alignment = alignment(spec, params, samples, f_values);
    r.l2_norm = empirical_l2_norm(f_values);
    r.rkhs_lower_bound =
        r.alignment > 0.0 ? rkhs_norm_lower_bound(r.alignment, r.l2_norm) : std::numeric_limits<double>::infinity();
    if (eig) {
        r.rkhs_norm = rkhs_norm_empirical(*eig, f_values).value;
        if (gram) r.bound_term = generalization_bound_terms(*eig, *gram, f_values, gram->size()).bound_term;
    }
    return r;
}

void save_gram(const std::filesystem::path& path, const GramMatrix& gram) {
    binio::write_square(path, "NTKG", gram.values);
    nlohmann::json side;
    side["m"] = gram.size();
    side["dataset_fingerprint"] = gram.dataset_fingerprint;
    side["network_fingerprint"] = gram.network_fingerprint;
    side["format"] = "NTKG v1 row-major little-endian f64";
    std::ofstream(path.string() + ".json") << side.dump(2) << '\n';
}

GramMatrix load_gram(const std::filesystem::path& path) {
    GramMatrix g;
    g.values = binio::read_square(path, "NTKG");
    std::ifstream in(path.string() + ".json");
    if (in) {
        nlohmann::json side;
        try {
            in >> side;
        } catch (const nlohmann::json::exception& e) {
            throw DataError("corrupt gram sidecar: " + std::string(e.what()));
        }
        g.dataset_fingerprint = side.value("dataset_fingerprint", "");
        g.network_fingerprint = side.value("network_fingerprint", "");
    }
    return g;
}

}  // namespace ntk
