#include "ntklab/rotation.hpp"

#include <cmath>
#include <limits>

#include "ntklab/csv.hpp"
#include "ntklab/errors.hpp"
#include "ntklab/parallel.hpp"

namespace ntk {

RotationTrace track_rotation(const NetworkSpec& spec, const std::vector<Checkpoint>& checkpoints,
                             const Dataset& dataset, VectorRef y, std::size_t k, const Matrix& probes,
                             std::vector<std::string> probe_names, const GramOptions& options) {
    if (checkpoints.empty()) throw ConfigError("track_rotation: no checkpoints");
    const auto m = static_cast<Eigen::Index>(dataset.size());
    require_dims(y.size() == m, "label vector length vs dataset");
    require_dims(probes.rows() == m || probes.cols() == 0, "probe length vs dataset");
    require_dims(probe_names.size() == static_cast<std::size_t>(probes.cols()), "probe names vs probes");
    if (k < 1 || k > dataset.size()) throw ConfigError("track_rotation: K outside [1, m]");
    for (const auto& c : checkpoints) require_dims(c.params.matches(spec), "checkpoint does not belong to spec");

    const auto count = checkpoints.size();
    RotationTrace t;
    t.k = k;
    t.probe_names = std::move(probe_names);
    t.epochs.resize(count);
    t.energy_concentration.assign(count, std::nan(""));
    t.jacobian_norm.assign(count, std::nan(""));
    t.failures.assign(count, "");
    t.alignments = Matrix::Constant(static_cast<Eigen::Index>(count), probes.cols(), std::nan(""));

    GramOptions inner = options;
    inner.threads = 1;
    parallel_for(count, options.threads, [&](std::size_t c) {
        const auto& ck = checkpoints[c];
        t.epochs[c] = ck.epoch;
        try {
            const auto g = gram(spec, ck.params, dataset.samples, inner);
            t.jacobian_norm[c] = g.values.trace() / static_cast<double>(m);
            const auto eig = eigendecompose(g);
            t.energy_concentration[c] = energy_concentration(eig, y, k);
            if (probes.cols() > 0)
                t.alignments.row(static_cast<Eigen::Index>(c)) = alignments(spec, ck.params, dataset.samples, probes).transpose();
        } catch (const Error& e) {
            t.failures[c] = e.what();
        }
    });
    return t;
}

Vector alignment_spectrum(const NetworkSpec& spec, const ParamVector& params_t, const Dataset& dataset,
                          const EigenSystem& eig0, std::size_t j_max) {
    if (j_max < 1 || j_max > eig0.size())
        throw ConfigError("alignment spectrum: J=" + std::to_string(j_max) + " outside [1, " +
                          std::to_string(eig0.size()) + "]");
    require_dims(eig0.size() == dataset.size(), "eigensystem size vs dataset");
    if (!eig0.gram_dataset_fingerprint.empty() && eig0.gram_dataset_fingerprint != dataset.fingerprint())
        throw DataError("alignment spectrum: eigensystem was computed on different samples");
    return alignments(spec, params_t, dataset.samples, eig0.eigenfunctions.leftCols(static_cast<Eigen::Index>(j_max)));
}

std::vector<TransferRow> pretrained_kernel_transfer(const NetworkSpec& spec, const std::vector<Checkpoint>& checkpoints,
                                                    const Dataset& train_set, const Dataset& test_set,
                                                    const TrainConfig& config, const TrainRecord* nonlinear,
                                                    double loss_threshold, unsigned threads) {
    if (checkpoints.empty()) throw ConfigError("kernel transfer: no checkpoints");
    std::vector<TransferRow> rows(checkpoints.size());
    parallel_for(checkpoints.size(), threads, [&](std::size_t c) {
        const auto& ck = checkpoints[c];
        TrainConfig tc = config;
        tc.checkpoint_epochs.clear();
        tc.record_batch_losses = true;
        tc.model_kind = ck.epoch == 0 ? ModelKind::linearized_biased : ModelKind::linearized_unbiased;
        const auto rec = train(spec, ck.params, train_set, test_set, tc, &ck.params);
        rows[c].kind = ck.epoch == 0 ? "linearized_init" : "linearized_pretrained";
        rows[c].checkpoint_epoch = ck.epoch;
        rows[c].iterations_to_loss = iterations_to_loss(rec, loss_threshold);
        rows[c].test_accuracy = rec.test_acc.back();
        rows[c].final_train_loss = rec.train_loss.back();
    });
    if (nonlinear != nullptr && nonlinear->epochs() > 0) {
        TransferRow r;
        r.kind = "nonlinear";
        r.checkpoint_epoch = nonlinear->first_epoch + nonlinear->epochs();
        r.iterations_to_loss = iterations_to_loss(*nonlinear, loss_threshold);
        r.test_accuracy = nonlinear->test_acc.back();
        r.final_train_loss = nonlinear->train_loss.back();
        rows.push_back(r);
    }
    return rows;
}

void write_rotation_csv(const std::filesystem::path& path, const RotationTrace& trace) {
    csv::Table t;
    t.header = {"checkpoint_epoch", "energy_concentration", "jacobian_norm"};
    for (const auto& name : trace.probe_names) t.header.push_back("alpha_" + name);
    t.header.push_back("failure");
    for (std::size_t c = 0; c < trace.epochs.size(); ++c) {
        csv::Row r = {csv::integer(static_cast<std::int64_t>(trace.epochs[c])), csv::real(trace.energy_concentration[c]),
                      csv::real(trace.jacobian_norm[c])};
        for (Eigen::Index p = 0; p < trace.alignments.cols(); ++p)
            r.push_back(csv::real(trace.alignments(static_cast<Eigen::Index>(c), p)));
        r.push_back(trace.failures[c]);
        t.rows.push_back(std::move(r));
    }
    csv::write(path, t);
}

void write_transfer_csv(const std::filesystem::path& path, const std::vector<TransferRow>& rows) {
    csv::Table t;
    t.header = {"kind", "checkpoint_epoch", "iterations_to_loss", "test_accuracy", "final_train_loss"};
    for (const auto& r : rows)
        t.rows.push_back({r.kind, csv::integer(static_cast<std::int64_t>(r.checkpoint_epoch)),
                          r.iterations_to_loss ? csv::integer(static_cast<std::int64_t>(*r.iterations_to_loss)) : "",
                          csv::real(r.test_accuracy), csv::real(r.final_train_loss)});
    csv::write(path, t);
}

}  // namespace ntk
