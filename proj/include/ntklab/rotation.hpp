#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ntklab/dataset.hpp"
#include "ntklab/kernel.hpp"
#include "ntklab/netcore.hpp"
#include "ntklab/spectral.hpp"
#include "ntklab/trainer.hpp"

namespace ntk {

inline const std::vector<std::size_t> kDefaultCheckpointEpochs = {0, 1, 2, 5, 10, 25, 50, 100};
inline constexpr std::size_t kDefaultProbeCount = 20;

// Kernel statistics along a training trajectory, one entry per checkpoint.
struct RotationTrace {
    std::vector<std::size_t> epochs;
    std::vector<double> energy_concentration;  // NaN where the checkpoint failed
    std::vector<double> jacobian_norm;         // (1/m) sum_i ||grad f(x_i)||^2
    Matrix alignments;                         // checkpoints x probes
    std::vector<std::string> probe_names;
    std::vector<std::string> failures;  // empty string when the checkpoint succeeded
    std::size_t k = 0;
};

// Gram, eigensystem and energy concentration of `y` on the top-K eigenvectors
// per checkpoint; probe alignments come from Jacobian sweeps. Failures of one
// checkpoint are recorded and the trace continues.
RotationTrace track_rotation(const NetworkSpec& spec, const std::vector<Checkpoint>& checkpoints,
                             const Dataset& dataset, VectorRef y, std::size_t k, const Matrix& probes,
                             std::vector<std::string> probe_names, const GramOptions& options = {});

// alpha_t(phi_j), j = 1..J, for init-kernel eigenfunctions under params_t.
Vector alignment_spectrum(const NetworkSpec& spec, const ParamVector& params_t, const Dataset& dataset,
                          const EigenSystem& eig0, std::size_t j_max);

struct TransferRow {
    std::string kind;  // "linearized_init", "linearized_pretrained" or "nonlinear"
    std::size_t checkpoint_epoch = 0;
    std::optional<std::size_t> iterations_to_loss;
    double test_accuracy = 0.0;
    double final_train_loss = 0.0;
};

// One fresh linearized training per checkpoint. Epoch 0 is the standard
// linearization at initialization; later checkpoints use the unbiased
// linearization at theta_t starting from delta theta = 0. `nonlinear` adds
// the pretraining run itself as a reference row.
std::vector<TransferRow> pretrained_kernel_transfer(const NetworkSpec& spec, const std::vector<Checkpoint>& checkpoints,
                                                    const Dataset& train_set, const Dataset& test_set,
                                                    const TrainConfig& config, const TrainRecord* nonlinear = nullptr,
                                                    double loss_threshold = kDefaultLossThreshold,
                                                    unsigned threads = 1);

void write_rotation_csv(const std::filesystem::path& path, const RotationTrace& trace);
void write_transfer_csv(const std::filesystem::path& path, const std::vector<TransferRow>& rows);

}  // namespace ntk
