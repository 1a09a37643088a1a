#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ntklab/dataset.hpp"
#include "ntklab/netcore.hpp"
#include "ntklab/trainer.hpp"
#include "ntklab/types.hpp"

namespace ntk {

enum class NadMode { at_origin, dataset_expectation };

std::string to_string(NadMode m);
NadMode nad_mode_from_string(const std::string& s);

// Right singular vectors of the mixed Jacobian, strongest first.
struct NadBasis {
    Matrix directions;  // d x d, column j-1 holds v_j
    Vector singular_values;
    NadMode mode = NadMode::at_origin;
    std::string network_fingerprint;
    // Some consecutive singular values agree within 1e-8 relative; the
    // corresponding directions are exchangeable.
    bool tie_degenerate = false;

    std::size_t dim() const { return static_cast<std::size_t>(singular_values.size()); }
    Vector direction(std::size_t j) const;  // 1-based
};

// (1/m) sum_i mixed_jacobian(x_i).
Matrix mean_mixed_jacobian(const NetworkSpec& spec, const ParamVector& params, const RowMatrix& samples);

// mode = dataset_expectation requires `dataset`. relu is rejected.
NadBasis nad_basis(const NetworkSpec& spec, const ParamVector& params, NadMode mode = NadMode::at_origin,
                   const Dataset* dataset = nullptr);

// Principal angles (radians, ascending) between the spans of the first k
// directions of two bases.
Vector principal_angles(const NadBasis& a, const NadBasis& b, std::size_t k);

// N x d standard Gaussian samples, drawn in antithetic pairs and whitened so
// the sample mean is 0 and the sample covariance is I (up to rounding).
// N must be even and at least 2d.
RowMatrix moment_matched_gaussian(std::size_t d, std::size_t n, std::uint64_t seed);

enum class AlignmentMode { analytic, monte_carlo };

// analytic: ||M u||^2 with M from nad_basis' mode (at the origin, or averaged
// over `dataset`). monte_carlo: ||(1/N) sum (u^T x_i) grad f(x_i)||^2 over
// moment-matched Gaussian samples.
double predictor_alignment(const NetworkSpec& spec, const ParamVector& params, VectorRef u, AlignmentMode mode,
                           std::size_t n_samples = 200000, std::uint64_t seed = 0,
                           NadMode m_mode = NadMode::at_origin, const Dataset* dataset = nullptr);

struct SteinRecord {
    double mc_lhs = 0.0;        // ||(1/N) sum grad f(x_i) x_i^T u||
    double analytic_rhs = 0.0;  // ||(1/N) sum mixed_jacobian(x_i) u||
    double rel_err = 0.0;       // ||lhs - rhs|| / ||rhs||
};

SteinRecord stein_check(const NetworkSpec& spec, const ParamVector& params, VectorRef u, std::size_t n_samples,
                        std::uint64_t seed, unsigned threads = 1);

struct NadExperimentRow {
    std::size_t index = 0;
    double s2 = 0.0;
    double acc_nonlinear = 0.0;
    double acc_linear = 0.0;
};

struct NadExperimentConfig {
    std::vector<std::size_t> indices;
    std::size_t train_m = 0;
    std::size_t test_m = 0;
    double epsilon = 1.0;
    double sigma = 1.0;
    std::uint64_t data_seed = 0;
    TrainConfig train;
    unsigned threads = 1;
};

// Trains the nonlinear model and its linearization at `init` on the linear
// task along each selected NAD.
std::vector<NadExperimentRow> nad_experiment(const NetworkSpec& spec, const ParamVector& init, const NadBasis& basis,
                                             const NadExperimentConfig& config);

void write_nad_csv(const std::filesystem::path& path, const std::vector<NadExperimentRow>& rows);

// "NTKN" d x d matrix (row j = v_j), <stem>.sv.bin singular values, <stem>.json.
void save_nad_basis(const std::filesystem::path& stem, const NadBasis& basis);
NadBasis load_nad_basis(const std::filesystem::path& stem);

}  // namespace ntk
