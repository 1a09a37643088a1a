#include "ntklab/trainer.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include "ntklab/binio.hpp"
#include "ntklab/csv.hpp"
#include "ntklab/hashing.hpp"
#include "ntklab/random.hpp"

namespace ntk {

std::string to_string(Optimizer o) { return o == Optimizer::adam ? "adam" : "sgd_momentum"; }

std::string to_string(ModelKind k) {
    switch (k) {
        case ModelKind::nonlinear: return "nonlinear";
        case ModelKind::linearized_biased: return "linearized_biased";
        case ModelKind::linearized_unbiased: return "linearized_unbiased";
    }
    return "?";
}

Optimizer optimizer_from_string(const std::string& s) {
    if (s == "sgd_momentum" || s == "sgd") return Optimizer::sgd_momentum;
    if (s == "adam") return Optimizer::adam;
    throw ConfigError("unknown optimizer '" + s + "' (expected sgd_momentum or adam)");
}

ModelKind model_kind_from_string(const std::string& s) {
    if (s == "nonlinear") return ModelKind::nonlinear;
    if (s == "linearized_biased" || s == "linearized") return ModelKind::linearized_biased;
    if (s == "linearized_unbiased") return ModelKind::linearized_unbiased;
    throw ConfigError("unknown model kind '" + s + "'");
}

// ---------------------------------------------------------------------------
// TrainConfig

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("train: momentum must lie in [0, 1)");
    if (!(lr_decay > 0.0) || lr_decay > 1.0) throw ConfigError("train: lr_decay must lie in (0, 1]");
    if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
    if (epochs == 0) throw ConfigError("train: epochs must be at least 1");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0 && adam_epsilon > 0.0))
        throw ConfigError("train: invalid Adam constants");
    for (auto e : checkpoint_epochs)
        if (e > epochs) throw ConfigError("train: checkpoint epoch beyond the last epoch");
    if (!(divergence_threshold > 0.0)) throw ConfigError("train: divergence threshold must be positive");
}

nlohmann::json TrainConfig::to_json() const {
    return {{"optimizer", to_string(optimizer)},
            {"learning_rate", learning_rate},
            {"momentum", momentum},
            {"lr_decay", lr_decay},
            {"batch_size", batch_size},
            {"epochs", epochs},
            {"seed", seed},
            {"model_kind", to_string(model_kind)},
            {"loss", "logistic"},
            {"adam_beta1", adam_beta1},
            {"adam_beta2", adam_beta2},
            {"adam_epsilon", adam_epsilon},
            {"record_batch_losses", record_batch_losses},
            {"checkpoint_epochs", checkpoint_epochs},
            {"divergence_threshold", divergence_threshold}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    try {
        if (j.contains("loss") && j.at("loss") != "logistic") throw ConfigError("train: only the logistic loss is supported");
        if (j.contains("optimizer")) c.optimizer = optimizer_from_string(j.at("optimizer").get<std::string>());
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.momentum = j.value("momentum", c.momentum);
        c.lr_decay = j.value("lr_decay", c.lr_decay);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.epochs = j.value("epochs", c.epochs);
        c.seed = j.value("seed", c.seed);
        if (j.contains("model_kind")) c.model_kind = model_kind_from_string(j.at("model_kind").get<std::string>());
        c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
        c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
        c.adam_epsilon = j.value("adam_epsilon", c.adam_epsilon);
        c.record_batch_losses = j.value("record_batch_losses", c.record_batch_losses);
        c.checkpoint_epochs = j.value("checkpoint_epochs", c.checkpoint_epochs);
        c.divergence_threshold = j.value("divergence_threshold", c.divergence_threshold);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("train: ") + e.what());
    }
    c.validate();
    return c;
}

std::string TrainConfig::fingerprint() const { return sha256_hex(to_json().dump()).substr(0, 16); }

// ---------------------------------------------------------------------------
// Loss and model evaluation

double logistic_loss(double margin) {
    return margin > 0.0 ? std::log1p(std::exp(-margin)) : -margin + std::log1p(std::exp(margin));
}

namespace {

// d/df log(1 + exp(-y f)).
double logistic_slope(double y, double f) {
    const double z = y * f;
    if (z >= 0.0) {
        const double e = std::exp(-z);
        return -y * e / (1.0 + e);
    }
    return -y / (1.0 + std::exp(z));
}

bool is_linearized(ModelKind k) { return k != ModelKind::nonlinear; }

void check_cache(ModelKind kind, const LinearCache* cache, Eigen::Index rows) {
    if (!is_linearized(kind)) return;
    if (cache == nullptr) throw ConfigError("linearized model requires a reference Jacobian cache");
    require_dims(cache->jacobians.rows() == rows, "linear cache rows vs samples");
}

double linear_output(ModelKind kind, const ParamVector& params, const LinearCache& cache, Eigen::Index i) {
    const double delta = cache.jacobians.row(i).dot(params.values() - cache.reference.values());
    return kind == ModelKind::linearized_biased ? cache.reference_outputs[i] + delta : delta;
}

}  // namespace

LinearCache make_linear_cache(const NetworkSpec& spec, const ParamVector& reference, const RowMatrix& samples) {
    LinearCache c;
    c.reference = reference;
    c.jacobians = jacobian_matrix(spec, reference, samples, &c.reference_outputs);
    return c;
}

Vector model_outputs(const NetworkSpec& spec, ModelKind kind, const ParamVector& params, const LinearCache* cache,
                     const RowMatrix& samples) {
    if (!is_linearized(kind)) return forward_batch(spec, params, samples);
    check_cache(kind, cache, samples.rows());
    const Vector delta = cache->jacobians * (params.values() - cache->reference.values());
    if (kind == ModelKind::linearized_biased) return cache->reference_outputs + delta;
    return delta;
}

double batch_loss_gradient(const NetworkSpec& spec, ModelKind kind, const ParamVector& params,
                           const LinearCache* cache, const Dataset& data, std::span<const std::size_t> rows,
                           Vector& gradient) {
    if (!data.labels) throw DataError("training requires a labeled dataset");
    check_cache(kind, cache, data.samples.rows());
    if (rows.empty()) throw DataError("empty batch");
    const auto n = static_cast<Eigen::Index>(params.size());
    gradient.setZero(n);
    Vector jac(n);
    double loss = 0.0;
    for (auto r : rows) {
        const auto i = static_cast<Eigen::Index>(r);
        const double y = (*data.labels)[i];
        double f;
        if (is_linearized(kind)) {
            f = linear_output(kind, params, *cache, i);
            gradient.noalias() += logistic_slope(y, f) * cache->jacobians.row(i).transpose();
        } else {
            f = param_jacobian_into(spec, params, data.samples.row(i).transpose(), jac);
            gradient.noalias() += logistic_slope(y, f) * jac;
        }
        loss += logistic_loss(y * f);
    }
    const double inv = 1.0 / static_cast<double>(rows.size());
    gradient *= inv;
    return loss * inv;
}

namespace {

Evaluation score(const Vector& outputs, const Vector& labels) {
    Evaluation e;
    const auto m = outputs.size();
    if (m == 0) return {std::nan(""), std::nan("")};
    std::size_t correct = 0;
    double loss = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
        const double pred = outputs[i] >= 0.0 ? 1.0 : -1.0;
        correct += pred == labels[i];
        loss += logistic_loss(labels[i] * outputs[i]);
    }
    e.accuracy = static_cast<double>(correct) / static_cast<double>(m);
    e.mean_loss = loss / static_cast<double>(m);
    return e;
}

}  // namespace

Evaluation evaluate(const NetworkSpec& spec, ModelKind kind, const ParamVector& params, const Dataset& dataset,
                    const ParamVector* reference) {
    if (!dataset.labels) throw DataError("evaluate: dataset is unlabeled");
    if (!is_linearized(kind)) return score(forward_batch(spec, params, dataset.samples), *dataset.labels);
    if (reference == nullptr) throw ConfigError("evaluate: linearized model requires reference parameters");
    const auto cache = make_linear_cache(spec, *reference, dataset.samples);
    return score(model_outputs(spec, kind, params, &cache, dataset.samples), *dataset.labels);
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

std::string rng_digest(std::uint64_t seed, std::size_t epoch) {
    Sha256 h;
    h.update(std::string_view("shuffle-stream"));
    h.update(seed);
    h.update(static_cast<std::uint64_t>(epoch));
    return h.hex().substr(0, 16);
}

struct OptimizerState {
    std::vector<Vector> buffers;
    std::size_t step = 0;
};

void apply_update(const TrainConfig& cfg, double lr, const Vector& grad, Vector& theta, OptimizerState& st) {
    ++st.step;
    if (cfg.optimizer == Optimizer::sgd_momentum) {
        Vector& v = st.buffers[0];
        v = cfg.momentum * v + grad;
        theta -= lr * v;
        return;
    }
    Vector& m1 = st.buffers[0];
    Vector& m2 = st.buffers[1];
    m1 = cfg.adam_beta1 * m1 + (1.0 - cfg.adam_beta1) * grad;
    m2 = cfg.adam_beta2 * m2 + (1.0 - cfg.adam_beta2) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(st.step));
    const double c2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(st.step));
    theta.array() -= lr * (m1.array() / c1) / ((m2.array() / c2).sqrt() + cfg.adam_epsilon);
}

Checkpoint make_checkpoint(std::size_t epoch, const ParamVector& params, const OptimizerState& st,
                           const TrainConfig& cfg) {
    Checkpoint c;
    c.epoch = epoch;
    c.params = params;
    c.optimizer_state = st.buffers;
    c.step = st.step;
    c.config_fingerprint = cfg.fingerprint();
    c.rng_digest = rng_digest(cfg.seed, epoch);
    return c;
}

bool wants_checkpoint(const TrainConfig& cfg, std::size_t epoch) {
    for (auto e : cfg.checkpoint_epochs)
        if (e == epoch) return true;
    return false;
}

}  // namespace

TrainRecord train(const NetworkSpec& spec, const ParamVector& init_params, const Dataset& train_set,
                  const Dataset& test_set, const TrainConfig& config, const ParamVector* reference,
                  const Checkpoint* resume) {
    config.validate();
    if (!train_set.labels) throw DataError("train: training set is unlabeled");
    if (test_set.size() > 0 && !test_set.labels) throw DataError("train: test set is unlabeled");
    if (train_set.size() == 0) throw DataError("train: empty training set");
    require_dims(train_set.dim() == spec.input_dim, "training samples vs input_dim");
    require_dims(test_set.size() == 0 || test_set.dim() == spec.input_dim, "test samples vs input_dim");
    require_dims(init_params.matches(spec), "initial parameters do not belong to spec");

    const bool linear = is_linearized(config.model_kind);
    const ParamVector& ref = reference ? *reference : init_params;
    if (linear) require_dims(ref.matches(spec), "reference parameters do not belong to spec");

    std::optional<LinearCache> train_cache;
    std::optional<LinearCache> test_cache;
    if (linear) {
        train_cache = make_linear_cache(spec, ref, train_set.samples);
        if (test_set.size() > 0) test_cache = make_linear_cache(spec, ref, test_set.samples);
    }

    TrainRecord rec;
    rec.config = config.to_json();
    rec.config["reference_fingerprint"] = linear ? ref.fingerprint() : "";
    rec.initial_params = init_params;

    const auto n = static_cast<Eigen::Index>(spec.param_count());
    OptimizerState st;
    st.buffers.assign(config.optimizer == Optimizer::adam ? 2 : 1, Vector::Zero(n));
    ParamVector params = init_params;
    std::size_t start_epoch = 0;
    if (resume) {
        if (resume->config_fingerprint != config.fingerprint())
            throw ConfigError("train: checkpoint was taken under a different configuration");
        require_dims(resume->params.matches(spec), "checkpoint parameters do not belong to spec");
        if (resume->optimizer_state.size() != st.buffers.size()) throw DataError("train: checkpoint optimizer state mismatch");
        params = resume->params;
        st.buffers = resume->optimizer_state;
        st.step = resume->step;
        start_epoch = resume->epoch;
    }
    rec.first_epoch = start_epoch;

    const std::size_t m = train_set.size();
    const std::size_t bs = std::min(config.batch_size, m);
    rec.batches_per_epoch = (m + bs - 1) / bs;
    const LinearCache* tc = train_cache ? &*train_cache : nullptr;
    const LinearCache* vc = test_cache ? &*test_cache : nullptr;

    if (!resume && wants_checkpoint(config, 0)) rec.checkpoints.push_back(make_checkpoint(0, params, st, config));

    Vector grad(n);
    for (std::size_t epoch = start_epoch; epoch < config.epochs; ++epoch) {
        const double lr = config.learning_rate * std::pow(config.lr_decay, static_cast<double>(epoch));
        const auto order = permutation(m, mix_seed(config.seed, epoch));
        const std::string kernel_fp = linear ? ref.fingerprint() : params.fingerprint();
        double loss_sum = 0.0;
        for (std::size_t b = 0; b < rec.batches_per_epoch; ++b) {
            const auto begin = b * bs;
            const auto len = std::min(bs, m - begin);
            const std::span<const std::size_t> rows(order.data() + begin, len);
            const double loss = batch_loss_gradient(spec, config.model_kind, params, tc, train_set, rows, grad);
            if (!std::isfinite(loss) || loss > config.divergence_threshold || !grad.allFinite()) {
                rec.final_params = params;
                throw TrainingDiverged("train: loss diverged at epoch " + std::to_string(epoch + 1) + " (loss " +
                                           std::to_string(loss) + ")",
                                       std::move(rec));
            }
            loss_sum += loss;
            if (config.record_batch_losses) rec.batch_losses.push_back(loss);
            apply_update(config, lr, grad, params.values(), st);
        }
        rec.train_loss.push_back(loss_sum / static_cast<double>(rec.batches_per_epoch));
        rec.train_acc.push_back(
            score(model_outputs(spec, config.model_kind, params, tc, train_set.samples), *train_set.labels).accuracy);
        if (test_set.size() > 0) {
            const auto e = score(model_outputs(spec, config.model_kind, params, vc, test_set.samples), *test_set.labels);
            rec.test_acc.push_back(e.accuracy);
            rec.test_loss.push_back(e.mean_loss);
        } else {
            rec.test_acc.push_back(std::nan(""));
            rec.test_loss.push_back(std::nan(""));
        }
        rec.param_hashes.push_back(params.fingerprint());
        rec.kernel_fingerprints.push_back(kernel_fp);
        if (wants_checkpoint(config, epoch + 1)) rec.checkpoints.push_back(make_checkpoint(epoch + 1, params, st, config));
    }
    rec.final_params = params;
    return rec;
}

// ---------------------------------------------------------------------------
// Metrics and persistence

Distance distance_metrics(const ParamVector& theta0, const ParamVector& theta_t) {
    require_dims(theta0.size() == theta_t.size() && theta0.spec_id() == theta_t.spec_id(),
                 "distance metrics need parameters of the same spec");
    const double n0 = theta0.values().norm();
    const double nt = theta_t.values().norm();
    if (n0 == 0.0 || nt == 0.0) throw NumericalError("cosine distance undefined for a zero parameter vector");
    Distance d;
    d.l2 = (theta_t.values() - theta0.values()).norm();
    d.cosine_distance = 1.0 - theta0.values().dot(theta_t.values()) / (n0 * nt);
    return d;
}

std::optional<std::size_t> iterations_to_loss(const TrainRecord& record, double threshold) {
    if (!record.batch_losses.empty() && record.batches_per_epoch > 0) {
        const std::size_t window = record.batches_per_epoch;
        double sum = 0.0;
        for (std::size_t i = 0; i < record.batch_losses.size(); ++i) {
            sum += record.batch_losses[i];
            if (i >= window) sum -= record.batch_losses[i - window];
            const double mean = sum / static_cast<double>(std::min(i + 1, window));
            if (mean <= threshold) return i + 1;
        }
        return std::nullopt;
    }
    for (std::size_t e = 0; e < record.train_loss.size(); ++e)
        if (record.train_loss[e] <= threshold) return record.first_epoch + e + 1;
    return std::nullopt;
}

void write_train_csv(const std::filesystem::path& path, const TrainRecord& record) {
    csv::Table t;
    t.header = {"epoch", "train_loss", "train_acc", "test_acc"};
    for (std::size_t e = 0; e < record.epochs(); ++e) {
        t.rows.push_back({csv::integer(static_cast<std::int64_t>(record.first_epoch + e + 1)),
                          csv::real(record.train_loss[e]), csv::real(record.train_acc[e]),
                          csv::real(record.test_acc[e])});
    }
    csv::write(path, t);
}

void save_checkpoint(const std::filesystem::path& stem, const Checkpoint& ckpt) {
    const auto base = stem.string();
    binio::write_rect(base + ".params.bin", "NTKP", Matrix(ckpt.params.values()));
    if (!ckpt.optimizer_state.empty()) {
        Matrix state(ckpt.params.values().size(), static_cast<Eigen::Index>(ckpt.optimizer_state.size()));
        for (std::size_t k = 0; k < ckpt.optimizer_state.size(); ++k) state.col(static_cast<Eigen::Index>(k)) = ckpt.optimizer_state[k];
        binio::write_rect(base + ".optstate.bin", "NTKP", state);
    }
    nlohmann::json side = {{"epoch", ckpt.epoch},
                           {"step", ckpt.step},
                           {"spec_id", ckpt.params.spec_id()},
                           {"params_fingerprint", ckpt.params.fingerprint()},
                           {"config_fingerprint", ckpt.config_fingerprint},
                           {"rng_digest", ckpt.rng_digest},
                           {"optimizer_buffers", ckpt.optimizer_state.size()}};
    std::ofstream(base + ".json") << side.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& stem, const NetworkSpec& spec) {
    const auto base = stem.string();
    std::ifstream in(base + ".json");
    if (!in) throw DataError("missing checkpoint manifest " + base + ".json");
    nlohmann::json side;
    try {
        in >> side;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("corrupt checkpoint manifest: " + std::string(e.what()));
    }
    const Matrix p = binio::read_rect(base + ".params.bin", "NTKP");
    if (p.cols() != 1) throw DataError("checkpoint parameter file must have one column");
    Checkpoint c;
    c.params = ParamVector(spec, p.col(0));
    if (side.value("params_fingerprint", "") != c.params.fingerprint())
        throw DataError("checkpoint parameter fingerprint mismatch for " + base);
    c.epoch = side.value("epoch", std::size_t{0});
    c.step = side.value("step", std::size_t{0});
    c.config_fingerprint = side.value("config_fingerprint", "");
    c.rng_digest = side.value("rng_digest", "");
    if (side.value("optimizer_buffers", std::size_t{0}) > 0) {
        const Matrix s = binio::read_rect(base + ".optstate.bin", "NTKP");
        for (Eigen::Index k = 0; k < s.cols(); ++k) c.optimizer_state.emplace_back(s.col(k));
    }
    return c;
}

}  // namespace ntk
