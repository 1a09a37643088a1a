#include "ntklab/nads.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <Eigen/Cholesky>
#include <Eigen/SVD>

#include "ntklab/binio.hpp"
#include "ntklab/csv.hpp"
#include "ntklab/errors.hpp"
#include "ntklab/parallel.hpp"
#include "ntklab/random.hpp"
#include "ntklab/tasks.hpp"

namespace ntk {

std::string to_string(NadMode m) { return m == NadMode::at_origin ? "at_origin" : "dataset_expectation"; }

NadMode nad_mode_from_string(const std::string& s) {
    if (s == "at_origin") return NadMode::at_origin;
    if (s == "dataset_expectation") return NadMode::dataset_expectation;
    throw ConfigError("unknown NAD mode '" + s + "' (expected at_origin or dataset_expectation)");
}

Vector NadBasis::direction(std::size_t j) const {
    if (j < 1 || j > dim())
        throw ConfigError("NAD index " + std::to_string(j) + " outside [1, " + std::to_string(dim()) + "]");
    return directions.col(static_cast<Eigen::Index>(j - 1));
}

namespace {

constexpr double kTieRelative = 1e-8;
constexpr std::size_t kChunkPairs = 2048;

void require_smooth(const NetworkSpec& spec) {
    if (spec.activation == Activation::relu && !spec.hidden_widths.empty())
        throw ConfigError("NADs need a differentiable activation: relu has a kink at the origin, use gelu or tanh");
}

void require_unit(VectorRef u, std::size_t d) {
    require_dims(static_cast<std::size_t>(u.size()) == d, "direction length vs input_dim");
    if (std::abs(u.norm() - 1.0) > 1e-8) throw ConfigError("direction u must have unit norm");
}

Matrix nad_matrix(const NetworkSpec& spec, const ParamVector& params, NadMode mode, const Dataset* dataset) {
    if (mode == NadMode::at_origin) return mixed_jacobian(spec, params, Vector::Zero(static_cast<Eigen::Index>(spec.input_dim)));
    if (dataset == nullptr) throw ConfigError("dataset_expectation mode requires a dataset");
    if (dataset->size() == 0) throw DataError("dataset_expectation mode: empty dataset");
    require_dims(dataset->dim() == spec.input_dim, "dataset dim vs input_dim");
    return mean_mixed_jacobian(spec, params, dataset->samples);
}

// Samples of one chunk: `pairs` Gaussian rows z, stream (seed, chunk).
RowMatrix raw_chunk(std::size_t d, std::size_t pairs, std::uint64_t seed, std::size_t chunk) {
    std::mt19937_64 rng(mix_seed(seed, chunk));
    std::normal_distribution<double> normal;
    RowMatrix z(static_cast<Eigen::Index>(pairs), static_cast<Eigen::Index>(d));
    for (Eigen::Index i = 0; i < z.rows(); ++i)
        for (Eigen::Index j = 0; j < z.cols(); ++j) z(i, j) = normal(rng);
    return z;
}

struct GaussianPlan {
    std::size_t d;
    std::size_t pairs;
    std::size_t chunks;
    std::uint64_t seed;
    Matrix whitening;  // L^{-T}, applied on the right of row samples

    std::size_t chunk_pairs(std::size_t c) const { return std::min(kChunkPairs, pairs - c * kChunkPairs); }

    // Whitened chunk with rows ordered x_0, -x_0, x_1, -x_1, ...
    RowMatrix chunk(std::size_t c) const {
        const RowMatrix w = raw_chunk(d, chunk_pairs(c), seed, c) * whitening;
        RowMatrix out(2 * w.rows(), w.cols());
        for (Eigen::Index i = 0; i < w.rows(); ++i) {
            out.row(2 * i) = w.row(i);
            out.row(2 * i + 1) = -w.row(i);
        }
        return out;
    }
};

GaussianPlan plan_gaussian(std::size_t d, std::size_t n, std::uint64_t seed, unsigned threads) {
    if (d == 0) throw ConfigError("gaussian sampling: dimension must be positive");
    if (n % 2 != 0 || n < 2 * d)
        throw ConfigError("gaussian sampling: sample count must be even and at least 2d (got " + std::to_string(n) + ")");
    GaussianPlan p{d, n / 2, (n / 2 + kChunkPairs - 1) / kChunkPairs, seed, {}};
    std::vector<Matrix> partial(p.chunks);
    parallel_for(p.chunks, threads, [&](std::size_t c) {
        const RowMatrix z = raw_chunk(d, p.chunk_pairs(c), seed, c);
        partial[c] = z.transpose() * z;
    });
    Matrix cov = Matrix::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    for (const auto& m : partial) cov += m;
    cov *= 2.0 / static_cast<double>(n);
    Eigen::LLT<Matrix> llt(cov);
    if (llt.info() != Eigen::Success) throw NumericalError("gaussian sampling: sample covariance is singular");
    const Matrix l = llt.matrixL();
    p.whitening = l.triangularView<Eigen::Lower>().solve(Matrix::Identity(l.rows(), l.cols())).transpose();
    return p;
}

}  // namespace

Matrix mean_mixed_jacobian(const NetworkSpec& spec, const ParamVector& params, const RowMatrix& samples) {
    if (samples.rows() == 0) throw DataError("mean mixed Jacobian of an empty sample set");
    Matrix sum = Matrix::Zero(static_cast<Eigen::Index>(params.size()), samples.cols());
    for (Eigen::Index i = 0; i < samples.rows(); ++i) sum += mixed_jacobian(spec, params, samples.row(i).transpose());
    return sum / static_cast<double>(samples.rows());
}

NadBasis nad_basis(const NetworkSpec& spec, const ParamVector& params, NadMode mode, const Dataset* dataset) {
    require_smooth(spec);
    require_dims(params.matches(spec), "parameters do not belong to spec");
    const Matrix m = nad_matrix(spec, params, mode, dataset);
    Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeFullV);
    const auto d = static_cast<Eigen::Index>(spec.input_dim);
    Vector s = Vector::Zero(d);
    s.head(svd.singularValues().size()) = svd.singularValues();
    Matrix v = svd.matrixV();

    for (Eigen::Index j = 0; j < d; ++j) {
        for (Eigen::Index i = 0; i < d; ++i) {
            if (std::abs(v(i, j)) > 1e-12) {
                if (v(i, j) < 0.0) v.col(j) *= -1.0;
                break;
            }
        }
    }

    NadBasis b;
    const double top = std::max(s[0], 1e-300);
    std::vector<Eigen::Index> order(static_cast<std::size_t>(d));
    std::iota(order.begin(), order.end(), 0);
    auto lex_greater = [&](Eigen::Index x, Eigen::Index y) {
        for (Eigen::Index i = 0; i < d; ++i)
            if (v(i, x) != v(i, y)) return v(i, x) > v(i, y);
        return false;
    };
    Eigen::Index run = 0;
    for (Eigen::Index j = 1; j <= d; ++j) {
        if (j < d && std::abs(s[j] - s[run]) <= kTieRelative * top) continue;
        if (j - run > 1) {
            b.tie_degenerate = true;
            std::stable_sort(order.begin() + run, order.begin() + j, lex_greater);
        }
        run = j;
    }
    b.directions.resize(d, d);
    b.singular_values.resize(d);
    for (Eigen::Index j = 0; j < d; ++j) {
        b.directions.col(j) = v.col(order[static_cast<std::size_t>(j)]);
        b.singular_values[j] = s[order[static_cast<std::size_t>(j)]];
    }
    b.mode = mode;
    b.network_fingerprint = params.fingerprint();
    return b;
}

Vector principal_angles(const NadBasis& a, const NadBasis& b, std::size_t k) {
    require_dims(a.dim() == b.dim(), "principal angles: bases of different dimension");
    if (k < 1 || k > a.dim()) throw ConfigError("principal angles: k outside [1, d]");
    const auto kk = static_cast<Eigen::Index>(k);
    const Matrix c = a.directions.leftCols(kk).transpose() * b.directions.leftCols(kk);
    Eigen::JacobiSVD<Matrix> svd(c);
    Vector angles(kk);
    for (Eigen::Index i = 0; i < kk; ++i) angles[i] = std::acos(std::clamp(svd.singularValues()[i], -1.0, 1.0));
    return angles;
}

RowMatrix moment_matched_gaussian(std::size_t d, std::size_t n, std::uint64_t seed) {
    const auto plan = plan_gaussian(d, n, seed, 1);
    RowMatrix out(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    Eigen::Index row = 0;
    for (std::size_t c = 0; c < plan.chunks; ++c) {
        const RowMatrix x = plan.chunk(c);
        out.middleRows(row, x.rows()) = x;
        row += x.rows();
    }
    return out;
}

double predictor_alignment(const NetworkSpec& spec, const ParamVector& params, VectorRef u, AlignmentMode mode,
                           std::size_t n_samples, std::uint64_t seed, NadMode m_mode, const Dataset* dataset) {
    require_unit(u, spec.input_dim);
    require_dims(params.matches(spec), "parameters do not belong to spec");
    if (mode == AlignmentMode::analytic) return (nad_matrix(spec, params, m_mode, dataset) * u).squaredNorm();

    const auto plan = plan_gaussian(spec.input_dim, n_samples, seed, 1);
    Vector sum = Vector::Zero(static_cast<Eigen::Index>(params.size()));
    Vector jac(sum.size());
    for (std::size_t c = 0; c < plan.chunks; ++c) {
        const RowMatrix x = plan.chunk(c);
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            param_jacobian_into(spec, params, x.row(i).transpose(), jac);
            sum += x.row(i).dot(u) * jac;
        }
    }
    return (sum / static_cast<double>(n_samples)).squaredNorm();
}

SteinRecord stein_check(const NetworkSpec& spec, const ParamVector& params, VectorRef u, std::size_t n_samples,
                        std::uint64_t seed, unsigned threads) {
    require_smooth(spec);
    require_unit(u, spec.input_dim);
    require_dims(params.matches(spec), "parameters do not belong to spec");
    const auto plan = plan_gaussian(spec.input_dim, n_samples, seed, threads);
    const auto n = static_cast<Eigen::Index>(params.size());
    std::vector<Vector> lhs(plan.chunks), rhs(plan.chunks);
    parallel_for(plan.chunks, threads, [&](std::size_t c) {
        const RowMatrix x = plan.chunk(c);
        Vector l = Vector::Zero(n), r = Vector::Zero(n), jac(n);
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            const Vector xi = x.row(i).transpose();
            param_jacobian_into(spec, params, xi, jac);
            l += xi.dot(u) * jac;
            r += mixed_jacobian_times(spec, params, xi, u);
        }
        lhs[c] = std::move(l);
        rhs[c] = std::move(r);
    });
    Vector l = Vector::Zero(n), r = Vector::Zero(n);
    for (std::size_t c = 0; c < plan.chunks; ++c) {
        l += lhs[c];
        r += rhs[c];
    }
    l /= static_cast<double>(n_samples);
    r /= static_cast<double>(n_samples);
    SteinRecord rec;
    rec.mc_lhs = l.norm();
    rec.analytic_rhs = r.norm();
    if (rec.analytic_rhs == 0.0) throw NumericalError("stein check: expected mixed derivative is zero along u");
    rec.rel_err = (l - r).norm() / rec.analytic_rhs;
    return rec;
}

std::vector<NadExperimentRow> nad_experiment(const NetworkSpec& spec, const ParamVector& init, const NadBasis& basis,
                                             const NadExperimentConfig& config) {
    if (config.indices.empty()) throw ConfigError("nad experiment: empty index list");
    for (auto j : config.indices)
        if (j < 1 || j > basis.dim()) throw ConfigError("nad experiment: index " + std::to_string(j) + " outside [1, d]");
    require_dims(basis.dim() == spec.input_dim, "NAD basis dimension vs input_dim");
    std::vector<NadExperimentRow> rows(config.indices.size());
    parallel_for(rows.size(), config.threads, [&](std::size_t k) {
        const auto j = config.indices[k];
        const std::uint64_t seed = mix_seed(config.data_seed, j);
        const Dataset task = linear_task(basis.direction(j), config.epsilon, config.sigma,
                                         config.train_m + config.test_m, seed);
        const Split s = split(task, config.train_m, config.test_m, mix_seed(seed, 1));
        TrainConfig tc = config.train;
        tc.model_kind = ModelKind::nonlinear;
        const auto nonlinear = train(spec, init, s.train, s.test, tc);
        tc.model_kind = ModelKind::linearized_biased;
        const auto linear = train(spec, init, s.train, s.test, tc, &init);
        const double sj = basis.singular_values[static_cast<Eigen::Index>(j - 1)];
        rows[k] = {j, sj * sj, nonlinear.test_acc.back(), linear.test_acc.back()};
    });
    return rows;
}

void write_nad_csv(const std::filesystem::path& path, const std::vector<NadExperimentRow>& rows) {
    csv::Table t;
    t.header = {"nad_index", "s2", "acc_nonlinear", "acc_linear"};
    for (const auto& r : rows)
        t.rows.push_back({csv::integer(static_cast<std::int64_t>(r.index)), csv::real(r.s2), csv::real(r.acc_nonlinear),
                          csv::real(r.acc_linear)});
    csv::write(path, t);
}

void save_nad_basis(const std::filesystem::path& stem, const NadBasis& basis) {
    const auto base = stem.string();
    binio::write_rect(base + ".bin", "NTKN", basis.directions.transpose());
    binio::write_f64_array(base + ".sv.bin", basis.singular_values);
    const nlohmann::json side = {{"d", basis.dim()},
                                 {"mode", to_string(basis.mode)},
                                 {"network_fingerprint", basis.network_fingerprint},
                                 {"tie_degenerate", basis.tie_degenerate},
                                 {"layout", "row j of the NTKN matrix is v_j"}};
    std::ofstream(base + ".json") << side.dump(2) << '\n';
}

NadBasis load_nad_basis(const std::filesystem::path& stem) {
    const auto base = stem.string();
    NadBasis b;
    b.directions = binio::read_rect(base + ".bin", "NTKN").transpose();
    b.singular_values = binio::read_f64_array(base + ".sv.bin");
    if (b.directions.rows() != b.directions.cols() || b.singular_values.size() != b.directions.cols())
        throw DataError("NAD basis: inconsistent matrix and singular value sizes");
    std::ifstream in(base + ".json");
    if (!in) throw DataError("missing NAD manifest " + base + ".json");
    nlohmann::json side;
    try {
        in >> side;
        b.mode = nad_mode_from_string(side.at("mode").get<std::string>());
        b.network_fingerprint = side.value("network_fingerprint", "");
        b.tie_degenerate = side.value("tie_degenerate", false);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("corrupt NAD manifest: " + std::string(e.what()));
    } catch (const ConfigError& e) {
        throw DataError(std::string("corrupt NAD manifest: ") + e.what());
    }
    return b;
}

}  // namespace ntk
