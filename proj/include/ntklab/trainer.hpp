#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ntklab/dataset.hpp"
#include "ntklab/errors.hpp"
#include "ntklab/netcore.hpp"

namespace ntk {

enum class Optimizer { sgd_momentum, adam };
enum class ModelKind { nonlinear, linearized_biased, linearized_unbiased };

std::string to_string(Optimizer o);
std::string to_string(ModelKind k);
Optimizer optimizer_from_string(const std::string& s);
ModelKind model_kind_from_string(const std::string& s);

struct TrainConfig {
    Optimizer optimizer = Optimizer::sgd_momentum;
    double learning_rate = 0.05;
    double momentum = 0.9;
    double lr_decay = 0.99;  // multiplicative per epoch; 1.0 keeps the rate constant
    std::size_t batch_size = 128;
    std::size_t epochs = 100;
    std::uint64_t seed = 0;
    ModelKind model_kind = ModelKind::nonlinear;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    bool record_batch_losses = false;
    std::vector<std::size_t> checkpoint_epochs;  // 0 = before the first update
    double divergence_threshold = 1e6;

    void validate() const;
    std::string fingerprint() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

// Full training state after `epoch` completed epochs. Shuffling is derived from
// (seed, epoch), so params + optimizer state are enough to resume bitwise.
struct Checkpoint {
    std::size_t epoch = 0;
    ParamVector params;
    std::vector<Vector> optimizer_state;  // momentum buffer, or Adam first/second moments
    std::size_t step = 0;
    std::string config_fingerprint;
    std::string rng_digest;
};

struct TrainRecord {
    nlohmann::json config;
    std::size_t first_epoch = 0;
    std::vector<double> train_loss;  // running mean of batch losses over the epoch
    std::vector<double> train_acc;   // end-of-epoch accuracy on the training set
    std::vector<double> test_acc;    // end-of-epoch accuracy on the test set (NaN without one)
    std::vector<double> test_loss;
    std::vector<std::string> param_hashes;
    // Fingerprint of the parameters the Jacobian was taken at in each epoch;
    // constant for linearized kinds.
    std::vector<std::string> kernel_fingerprints;
    std::vector<double> batch_losses;
    std::size_t batches_per_epoch = 0;
    std::vector<Checkpoint> checkpoints;
    ParamVector initial_params;
    ParamVector final_params;

    std::size_t epochs() const { return train_loss.size(); }
};

// Thrown when the loss exceeds the divergence threshold or stops being finite;
// carries the partial record.
class TrainingDiverged : public NumericalError {
public:
    TrainingDiverged(const std::string& what, TrainRecord partial)
        : NumericalError(what), partial_(std::move(partial)) {}
    const TrainRecord& partial() const { return partial_; }

private:
    TrainRecord partial_;
};

// Numerically stable log(1 + exp(-margin)).
double logistic_loss(double margin);

// Reference Jacobians and outputs of a dataset at theta_ref, computed once.
struct LinearCache {
    ParamVector reference;
    RowMatrix jacobians;
    Vector reference_outputs;
};

LinearCache make_linear_cache(const NetworkSpec& spec, const ParamVector& reference, const RowMatrix& samples);

// Model outputs for every sample; `cache` is required for linearized kinds and
// must belong to `samples`.
Vector model_outputs(const NetworkSpec& spec, ModelKind kind, const ParamVector& params, const LinearCache* cache,
                     const RowMatrix& samples);

// Mean logistic loss over `rows` and its gradient with respect to theta.
double batch_loss_gradient(const NetworkSpec& spec, ModelKind kind, const ParamVector& params,
                           const LinearCache* cache, const Dataset& data, std::span<const std::size_t> rows,
                           Vector& gradient);

struct Evaluation {
    double accuracy = 0.0;
    double mean_loss = 0.0;
};

// Accuracy uses sign(f) with sign(0) := +1.
Evaluation evaluate(const NetworkSpec& spec, ModelKind kind, const ParamVector& params, const Dataset& dataset,
                    const ParamVector* reference = nullptr);

// `reference` is theta_ref for linearized kinds (defaults to init_params).
// Resuming from a checkpoint continues the run it was taken from.
TrainRecord train(const NetworkSpec& spec, const ParamVector& init_params, const Dataset& train_set,
                  const Dataset& test_set, const TrainConfig& config, const ParamVector* reference = nullptr,
                  const Checkpoint* resume = nullptr);

struct Distance {
    double l2 = 0.0;
    double cosine_distance = 0.0;
};

Distance distance_metrics(const ParamVector& theta0, const ParamVector& theta_t);

inline constexpr double kDefaultLossThreshold = 0.01;

// First iteration at which the running training loss is <= threshold. With
// recorded batch losses the answer is a 1-based batch iteration (window = one
// epoch of batches); otherwise a 1-based epoch. nullopt when never reached.
std::optional<std::size_t> iterations_to_loss(const TrainRecord& record, double threshold = kDefaultLossThreshold);

void write_train_csv(const std::filesystem::path& path, const TrainRecord& record);

void save_checkpoint(const std::filesystem::path& stem, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& stem, const NetworkSpec& spec);

}  // namespace ntk
