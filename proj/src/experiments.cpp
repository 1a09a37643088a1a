#include "ntklab/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <set>

#include "ntklab/binio.hpp"
#include "ntklab/errors.hpp"
#include "ntklab/hashing.hpp"
#include "ntklab/kernel.hpp"
#include "ntklab/nads.hpp"
#include "ntklab/parallel.hpp"
#include "ntklab/random.hpp"
#include "ntklab/rotation.hpp"
#include "ntklab/spectral.hpp"
#include "ntklab/stats.hpp"
#include "ntklab/tasks.hpp"
#include "ntklab/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ntk::exp {

// ---------------------------------------------------------------------------
// Node

namespace {

std::string type_name(const json& j) { return j.type_name(); }

}  // namespace

bool Node::has(const std::string& key) const { return j_->is_object() && j_->contains(key); }

Node Node::at(const std::string& key) const {
    if (!j_->is_object()) fail("expected an object, got " + type_name(*j_));
    const auto it = j_->find(key);
    if (it == j_->end()) throw ConfigError(path_ + "." + key + ": required field is missing");
    return Node(*it, path_ + "." + key);
}

Node Node::at(std::size_t index) const {
    if (!j_->is_array()) fail("expected an array, got " + type_name(*j_));
    if (index >= j_->size()) fail("index " + std::to_string(index) + " out of range");
    return Node((*j_)[index], path_ + "[" + std::to_string(index) + "]");
}

std::size_t Node::size() const {
    if (!j_->is_array()) fail("expected an array, got " + type_name(*j_));
    return j_->size();
}

void Node::allow(const std::vector<std::string>& allowed) const {
    if (!j_->is_object()) fail("expected an object, got " + type_name(*j_));
    for (const auto& [key, value] : j_->items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            throw ConfigError(path_ + "." + key + ": unknown field");
    }
}

void Node::fail(const std::string& what) const { throw ConfigError(path_ + ": " + what); }

template <>
bool Node::get<bool>() const {
    if (!j_->is_boolean()) fail("expected a boolean, got " + type_name(*j_));
    return j_->get<bool>();
}

template <>
std::uint64_t Node::get<std::uint64_t>() const {
    if (!j_->is_number_integer() || (!j_->is_number_unsigned() && j_->get<std::int64_t>() < 0))
        fail("expected a non-negative integer, got " + j_->dump());
    return j_->get<std::uint64_t>();
}

template <>
int Node::get<int>() const {
    if (!j_->is_number_integer()) fail("expected an integer, got " + j_->dump());
    return j_->get<int>();
}

template <>
double Node::get<double>() const {
    if (!j_->is_number()) fail("expected a number, got " + j_->dump());
    return j_->get<double>();
}

template <>
std::string Node::get<std::string>() const {
    if (!j_->is_string()) fail("expected a string, got " + type_name(*j_));
    return j_->get<std::string>();
}

template <>
std::vector<std::size_t> Node::get<std::vector<std::size_t>>() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < size(); ++i) out.push_back(at(i).get<std::uint64_t>());
    return out;
}

template <>
std::vector<int> Node::get<std::vector<int>>() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < size(); ++i) out.push_back(at(i).get<int>());
    return out;
}

template <>
std::vector<double> Node::get<std::vector<double>>() const {
    std::vector<double> out;
    for (std::size_t i = 0; i < size(); ++i) out.push_back(at(i).get<double>());
    return out;
}

// ---------------------------------------------------------------------------
// Config parsing

namespace {

std::size_t positive(const Node& parent, const std::string& key) {
    const auto v = parent.req<std::uint64_t>(key);
    if (v == 0) parent.at(key).fail("must be positive");
    return v;
}

std::set<int> int_set(const Node& n) {
    const auto v = n.get<std::vector<int>>();
    return {v.begin(), v.end()};
}

fs::path resolve(const fs::path& base, const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}

Dataset build_dataset_impl(const Node& n, const fs::path& base, std::vector<fs::path>* inputs) {
    const auto source = n.req<std::string>("source");
    if (source == "gaussian") {
        n.allow({"source", "d", "m", "seed"});
        return synth_gaussian(positive(n, "d"), positive(n, "m"), n.opt<std::uint64_t>("seed", 0));
    }
    if (source == "idx") {
        n.allow({"source", "images", "labels", "classes", "downsample", "center", "limit"});
        IdxOptions o;
        if (n.has("classes")) o.classes = int_set(n.at("classes"));
        o.downsample = n.opt<std::uint64_t>("downsample", 0);
        o.center = n.opt<bool>("center", true);
        o.limit = n.opt<std::uint64_t>("limit", 0);
        const auto images = resolve(base, n.req<std::string>("images"));
        const auto labels = resolve(base, n.req<std::string>("labels"));
        if (inputs) {
            inputs->push_back(images);
            inputs->push_back(labels);
        }
        return load_idx_images(images, labels, o);
    }
    if (source == "file") {
        n.allow({"source", "path"});
        const auto path = resolve(base, n.req<std::string>("path"));
        if (inputs) {
            inputs->push_back(path);
            inputs->push_back(path.string() + ".json");
        }
        return load_dataset(path);
    }
    if (source == "inline") {
        n.allow({"source", "samples", "labels", "class_ids"});
        const Node rows = n.at("samples");
        if (rows.size() == 0) rows.fail("at least one sample is required");
        const auto first = rows.at(0).get<std::vector<double>>();
        if (first.empty()) rows.at(0).fail("samples must have positive dimension");
        Dataset ds;
        ds.samples.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(first.size()));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const auto r = rows.at(i).get<std::vector<double>>();
            if (r.size() != first.size()) rows.at(i).fail("ragged sample row");
            for (std::size_t k = 0; k < r.size(); ++k)
                ds.samples(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = r[k];
        }
        if (n.has("labels")) {
            const auto y = n.at("labels").get<std::vector<double>>();
            if (y.size() != rows.size()) n.at("labels").fail("length differs from the sample count");
            ds.labels = Eigen::Map<const Vector>(y.data(), static_cast<Eigen::Index>(y.size()));
        }
        if (n.has("class_ids")) ds.class_ids = n.at("class_ids").get<std::vector<int>>();
        ds.provenance = {{"generator", "inline"}};
        try {
            ds.validate();
        } catch (const DataError& e) {
            n.fail(e.what());
        }
        return ds;
    }
    n.at("source").fail("unknown data source '" + source + "' (expected gaussian, idx, file or inline)");
}

TrainConfig parse_train(const Node& n) {
    n.allow({"optimizer", "learning_rate", "momentum", "lr_decay", "batch_size", "epochs", "seed", "model_kind", "loss",
             "adam_beta1", "adam_beta2", "adam_epsilon", "record_batch_losses", "checkpoint_epochs",
             "divergence_threshold"});
    // Type checks with precise paths before the struct-level validation.
    for (const auto* key : {"learning_rate", "momentum", "lr_decay", "adam_beta1", "adam_beta2", "adam_epsilon",
                            "divergence_threshold"})
        if (n.has(key)) n.at(key).get<double>();
    for (const auto* key : {"batch_size", "epochs", "seed"})
        if (n.has(key)) n.at(key).get<std::uint64_t>();
    for (const auto* key : {"optimizer", "model_kind", "loss"})
        if (n.has(key)) n.at(key).get<std::string>();
    if (n.has("record_batch_losses")) n.at("record_batch_losses").get<bool>();
    if (n.has("checkpoint_epochs")) n.at("checkpoint_epochs").get<std::vector<std::size_t>>();
    try {
        return TrainConfig::from_json(n.raw());
    } catch (const ConfigError& e) {
        n.fail(e.what());
    }
}

std::string pad(std::size_t v) {
    std::string s = std::to_string(v);
    return std::string(s.size() < 4 ? 4 - s.size() : 0, '0') + s;
}

std::string opt_int(const std::optional<std::size_t>& v) {
    return v ? csv::integer(static_cast<std::int64_t>(*v)) : "";
}

double as_rank_value(const std::string& field) {
    return field.empty() ? std::numeric_limits<double>::infinity() : csv::parse_real(field);
}

// ---------------------------------------------------------------------------
// Run context

struct Context {
    Node root;
    fs::path out;
    fs::path base;
    unsigned threads = 1;
    std::vector<std::string> outputs;
    std::vector<fs::path> inputs;
    json seeds = json::object();
    json results = json::object();

    fs::path file(const std::string& relative) {
        if (std::find(outputs.begin(), outputs.end(), relative) != outputs.end())
            throw ConfigError("output '" + relative + "' written twice");
        outputs.push_back(relative);
        const auto p = out / relative;
        fs::create_directories(p.parent_path());
        return p;
    }

    GramOptions gram_options() const {
        GramOptions g;
        g.block_size = root.opt<std::uint64_t>("block_size", g.block_size);
        g.max_samples = root.opt<std::uint64_t>("max_samples", g.max_samples);
        if (g.block_size == 0) root.at("block_size").fail("must be positive");
        g.threads = threads;
        return g;
    }
};

struct Setup {
    NetworkSpec spec;
    ParamVector theta0;
};

Setup network_setup(Context& ctx) {
    Setup s;
    s.spec = parse_network(ctx.root.at("network"));
    const auto seed = ctx.root.opt<std::uint64_t>("init_seed", 0);
    ctx.seeds["init_seed"] = seed;
    s.theta0 = init_params(s.spec, seed);
    return s;
}

Dataset load_data(Context& ctx) { return build_dataset_impl(ctx.root.at("data"), ctx.base, &ctx.inputs); }

// Labeled train/test pair plus, for eigenfunction tasks, the eigensystem on
// the union (train rows first).
struct Prepared {
    Dataset train;
    Dataset test;
    Dataset all;
    std::optional<EigenSystem> eig;
    json info = json::object();
};

Dataset concat(const Dataset& a, const Dataset& b) {
    if (b.size() == 0) return a;
    Dataset out;
    out.samples.resize(static_cast<Eigen::Index>(a.size() + b.size()), a.samples.cols());
    out.samples << a.samples, b.samples;
    if (a.labels && b.labels) {
        out.labels = Vector(out.samples.rows());
        *out.labels << *a.labels, *b.labels;
    }
    if (!a.class_ids.empty() && !b.class_ids.empty()) {
        out.class_ids = a.class_ids;
        out.class_ids.insert(out.class_ids.end(), b.class_ids.begin(), b.class_ids.end());
    }
    out.provenance = a.provenance;
    return out;
}

void split_rows(const Dataset& all, std::size_t train_m, Prepared& p) {
    std::vector<std::size_t> tr(train_m), te(all.size() - train_m);
    for (std::size_t i = 0; i < tr.size(); ++i) tr[i] = i;
    for (std::size_t i = 0; i < te.size(); ++i) te[i] = train_m + i;
    p.train = all.subset(tr);
    p.test = all.subset(te);
}

// Unlabeled split of the configured data into the union dataset (train rows
// first).
Dataset data_union(Context& ctx, std::size_t train_m, std::size_t test_m) {
    const Dataset ds = load_data(ctx);
    const auto seed = ctx.root.opt<std::uint64_t>("split_seed", 0);
    ctx.seeds["split_seed"] = seed;
    if (train_m + test_m > ds.size())
        throw ConfigError("$.train_m: " + std::to_string(train_m) + " + " + std::to_string(test_m) + " exceeds the " +
                          std::to_string(ds.size()) + " available samples");
    const Split s = split(ds, train_m, test_m, seed);
    return concat(s.train, s.test);
}

Prepared prepare_task(Context& ctx, const Setup& net, std::size_t train_m, std::size_t test_m) {
    const Node task = ctx.root.at("task");
    const auto generator = task.req<std::string>("generator");
    Prepared p;
    p.info["generator"] = generator;
    if (generator == "linear_nad") {
        task.allow({"generator", "direction", "nad_index", "nad_mode", "epsilon", "sigma", "seed"});
        Vector u;
        if (task.has("direction")) {
            const auto v = task.at("direction").get<std::vector<double>>();
            u = Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
        } else {
            const auto mode = nad_mode_from_string(task.opt<std::string>("nad_mode", "at_origin"));
            const auto basis = nad_basis(net.spec, net.theta0, mode);
            u = basis.direction(task.req<std::uint64_t>("nad_index"));
        }
        require_dims(static_cast<std::size_t>(u.size()) == net.spec.input_dim, "task direction vs input_dim");
        const auto seed = task.opt<std::uint64_t>("seed", 0);
        ctx.seeds["task_seed"] = seed;
        p.all = linear_task(u, task.opt<double>("epsilon", 1.0), task.opt<double>("sigma", 1.0), train_m + test_m, seed);
        split_rows(p.all, train_m, p);
        return p;
    }

    Dataset all = data_union(ctx, train_m, test_m);
    require_dims(all.dim() == net.spec.input_dim, "data dimension vs network input_dim");
    if (generator == "dataset") {
        task.allow({"generator"});
        if (!all.labels) task.at("generator").fail("the data carries no labels");
        p.all = std::move(all);
    } else if (generator == "class_group") {
        task.allow({"generator", "positive_classes"});
        p.all = class_group_labels(all, int_set(task.at("positive_classes")));
    } else if (generator == "eigenfunction") {
        task.allow({"generator", "index"});
        const auto j = task.req<std::uint64_t>("index");
        if (j < 1 || j > all.size()) task.at("index").fail("outside [1, " + std::to_string(all.size()) + "]");
        p.eig = eigendecompose(gram(net.spec, net.theta0, all, ctx.gram_options()));
        p.all = label_with_eigenfunction(all, *p.eig, j);
        p.info["index"] = j;
        p.info["eigenvalue"] = p.eig->eigenvalues[static_cast<Eigen::Index>(j - 1)];
    } else {
        task.at("generator").fail("unknown generator '" + generator +
                                  "' (expected dataset, class_group, eigenfunction or linear_nad)");
    }
    split_rows(p.all, train_m, p);
    return p;
}

json record_summary(const TrainRecord& r) {
    json j;
    j["config"] = r.config;
    j["epochs"] = r.epochs();
    j["final_train_loss"] = r.train_loss.back();
    j["final_train_acc"] = r.train_acc.back();
    j["final_test_acc"] = std::isnan(r.test_acc.back()) ? json(nullptr) : json(r.test_acc.back());
    j["param_hashes"] = r.param_hashes;
    j["kernel_fingerprints"] = r.kernel_fingerprints;
    const auto it = iterations_to_loss(r);
    j["iterations_to_loss"] = it ? json(*it) : json(nullptr);
    try {
        const auto d = distance_metrics(r.initial_params, r.final_params);
        j["l2_distance"] = d.l2;
        j["cosine_distance"] = d.cosine_distance;
    } catch (const NumericalError&) {
        j["l2_distance"] = (r.final_params.values() - r.initial_params.values()).norm();
        j["cosine_distance"] = nullptr;
    }
    return j;
}

void write_summary(Context& ctx, const std::string& name, const json& values) {
    csv::Table t;
    t.header = {"metric", "value"};
    for (const auto& [k, v] : values.items()) {
        std::string field;
        if (v.is_number_float()) field = csv::real(v.get<double>());
        else if (v.is_number()) field = v.dump();
        else if (v.is_null()) field = "";
        else if (v.is_string()) field = v.get<std::string>();
        else field = v.dump();
        t.rows.push_back({k, field});
    }
    csv::write(ctx.file(name), t);
}

// ---------------------------------------------------------------------------
// Templates

const std::vector<std::string> kCommonKeys = {"experiment", "id", "output_dir", "threads", "block_size", "max_samples"};

std::vector<std::string> keys(std::initializer_list<std::string> extra) {
    std::vector<std::string> k = kCommonKeys;
    k.insert(k.end(), extra);
    return k;
}

void run_train(Context& ctx) {
    ctx.root.allow(keys({"network", "init_seed", "data", "task", "train_m", "test_m", "split_seed", "train"}));
    const auto net = network_setup(ctx);
    const auto train_m = positive(ctx.root, "train_m");
    const auto test_m = ctx.root.opt<std::uint64_t>("test_m", 0);
    const auto cfg = parse_train(ctx.root.at("train"));
    ctx.seeds["train_seed"] = cfg.seed;
    const auto p = prepare_task(ctx, net, train_m, test_m);
    const ParamVector* ref = cfg.model_kind == ModelKind::nonlinear ? nullptr : &net.theta0;
    const auto rec = train(net.spec, net.theta0, p.train, p.test, cfg, ref);
    write_train_csv(ctx.file("train.csv"), rec);
    binio::write_rect(ctx.file("params.bin"), "NTKP", Matrix(rec.final_params.values()));
    for (const auto& ck : rec.checkpoints) {
        const auto stem = "checkpoints/epoch_" + pad(ck.epoch);
        ctx.file(stem + ".params.bin");
        ctx.file(stem + ".optstate.bin");
        ctx.file(stem + ".json");
        save_checkpoint(ctx.out / stem, ck);
    }
    json summary = record_summary(rec);
    summary["task"] = p.info;
    std::ofstream(ctx.file("record.json")) << summary.dump(2) << '\n';
    ctx.results = {{"final_test_acc", summary["final_test_acc"]}, {"final_train_loss", summary["final_train_loss"]}};
}

struct SweepRun {
    TrainRecord record;
};

void run_eigenfunction_sweep(Context& ctx) {
    ctx.root.allow(keys({"network", "init_seed", "data", "indices", "train_m", "test_m", "split_seed", "train"}));
    const auto net = network_setup(ctx);
    const auto train_m = positive(ctx.root, "train_m");
    const auto test_m = positive(ctx.root, "test_m");
    const auto indices = ctx.root.req<std::vector<std::size_t>>("indices");
    if (indices.empty()) ctx.root.at("indices").fail("at least one index is required");
    auto cfg = parse_train(ctx.root.at("train"));
    cfg.record_batch_losses = true;
    ctx.seeds["train_seed"] = cfg.seed;

    const Dataset all = data_union(ctx, train_m, test_m);
    require_dims(all.dim() == net.spec.input_dim, "data dimension vs network input_dim");
    for (std::size_t k = 0; k < indices.size(); ++k)
        if (indices[k] < 1 || indices[k] > all.size())
            ctx.root.at("indices").at(k).fail("outside [1, " + std::to_string(all.size()) + "]");
    const auto eig = eigendecompose(gram(net.spec, net.theta0, all, ctx.gram_options()));

    std::vector<Prepared> tasks(indices.size());
    for (std::size_t k = 0; k < indices.size(); ++k) {
        tasks[k].all = label_with_eigenfunction(all, eig, indices[k]);
        split_rows(tasks[k].all, train_m, tasks[k]);
    }
    std::vector<TrainRecord> records(2 * indices.size());
    parallel_for(records.size(), ctx.threads, [&](std::size_t r) {
        const auto& t = tasks[r / 2];
        TrainConfig tc = cfg;
        tc.model_kind = r % 2 == 0 ? ModelKind::nonlinear : ModelKind::linearized_biased;
        records[r] = train(net.spec, net.theta0, t.train, t.test, tc, r % 2 == 0 ? nullptr : &net.theta0);
    });

    csv::Table summary;
    summary.header = {"j", "lambda", "overlap", "balance", "acc_nonlinear", "acc_linear", "iters_nonlinear",
                      "iters_linear", "l2_nonlinear", "cosine_nonlinear", "l2_linear", "cosine_linear"};
    for (std::size_t k = 0; k < indices.size(); ++k) {
        const auto j = indices[k];
        const auto& nl = records[2 * k];
        const auto& li = records[2 * k + 1];
        write_train_csv(ctx.file("runs/j" + pad(j) + "_nonlinear.csv"), nl);
        write_train_csv(ctx.file("runs/j" + pad(j) + "_linearized.csv"), li);
        const auto dn = distance_metrics(nl.initial_params, nl.final_params);
        const auto dl = distance_metrics(li.initial_params, li.final_params);
        summary.rows.push_back({csv::integer(static_cast<std::int64_t>(j)),
                                csv::real(eig.eigenvalues[static_cast<Eigen::Index>(j - 1)]),
                                csv::real(binarization_overlap(eig, j)),
                                csv::real(tasks[k].all.provenance["labeling"]["balance"].get<double>()),
                                csv::real(nl.test_acc.back()), csv::real(li.test_acc.back()),
                                opt_int(iterations_to_loss(nl)), opt_int(iterations_to_loss(li)), csv::real(dn.l2),
                                csv::real(dn.cosine_distance), csv::real(dl.l2), csv::real(dl.cosine_distance)});
    }
    csv::write(ctx.file("summary.csv"), summary);
}

void run_nad_sweep(Context& ctx) {
    ctx.root.allow(keys({"network", "init_seed", "nad_mode", "data", "indices", "train_m", "test_m", "epsilon", "sigma",
                         "data_seed", "train"}));
    const auto net = network_setup(ctx);
    const auto mode = nad_mode_from_string(ctx.root.opt<std::string>("nad_mode", "at_origin"));
    std::optional<Dataset> data;
    if (mode == NadMode::dataset_expectation) data = load_data(ctx);
    const auto basis = nad_basis(net.spec, net.theta0, mode, data ? &*data : nullptr);
    const auto d = net.spec.input_dim;
    NadExperimentConfig nc;
    nc.indices = ctx.root.opt<std::vector<std::size_t>>(
        "indices", std::vector<std::size_t>{1, std::max<std::size_t>(1, d / 4), std::max<std::size_t>(1, d / 2), d});
    for (std::size_t k = 0; k < nc.indices.size(); ++k)
        if (nc.indices[k] < 1 || nc.indices[k] > d)
            ctx.root.at("indices").at(k).fail("outside [1, " + std::to_string(d) + "]");
    nc.train_m = positive(ctx.root, "train_m");
    nc.test_m = positive(ctx.root, "test_m");
    nc.epsilon = ctx.root.opt<double>("epsilon", 1.0);
    nc.sigma = ctx.root.opt<double>("sigma", 1.0);
    nc.data_seed = ctx.root.opt<std::uint64_t>("data_seed", 0);
    ctx.seeds["data_seed"] = nc.data_seed;
    nc.train = parse_train(ctx.root.at("train"));
    ctx.seeds["train_seed"] = nc.train.seed;
    nc.threads = ctx.threads;

    for (const auto* suffix : {".bin", ".sv.bin", ".json"}) ctx.file(std::string("nads") + suffix);
    save_nad_basis(ctx.out / "nads", basis);
    const auto rows = nad_experiment(net.spec, net.theta0, basis, nc);
    write_nad_csv(ctx.file("nad_sweep.csv"), rows);
    ctx.results["tie_degenerate"] = basis.tie_degenerate;
}

void run_sample_size_sweep(Context& ctx) {
    ctx.root.allow(keys({"network", "init_seed", "data", "task", "train_sizes", "test_m", "split_seed", "train"}));
    const auto net = network_setup(ctx);
    const auto sizes = ctx.root.req<std::vector<std::size_t>>("train_sizes");
    if (sizes.empty()) ctx.root.at("train_sizes").fail("at least one size is required");
    for (std::size_t k = 0; k < sizes.size(); ++k)
        if (sizes[k] == 0) ctx.root.at("train_sizes").at(k).fail("must be positive");
    const auto test_m = positive(ctx.root, "test_m");
    auto cfg = parse_train(ctx.root.at("train"));
    cfg.record_batch_losses = true;
    ctx.seeds["train_seed"] = cfg.seed;
    const Node task = ctx.root.at("task");
    if (task.req<std::string>("generator") == "eigenfunction")
        task.at("generator").fail("sample-size sweeps need a sample-independent labeling");
    const auto largest = *std::max_element(sizes.begin(), sizes.end());
    // One split at the largest size; smaller training sets are its prefixes.
    const auto p = prepare_task(ctx, net, largest, test_m);

    std::vector<TrainRecord> records(2 * sizes.size());
    parallel_for(records.size(), ctx.threads, [&](std::size_t r) {
        std::vector<std::size_t> rows(sizes[r / 2]);
        for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
        const Dataset tr = p.train.subset(rows);
        TrainConfig tc = cfg;
        tc.model_kind = r % 2 == 0 ? ModelKind::nonlinear : ModelKind::linearized_biased;
        records[r] = train(net.spec, net.theta0, tr, p.test, tc, r % 2 == 0 ? nullptr : &net.theta0);
    });
    csv::Table summary;
    summary.header = {"train_m", "acc_nonlinear", "acc_linear", "iters_nonlinear", "iters_linear",
                      "l2_nonlinear", "cosine_nonlinear", "l2_linear", "cosine_linear"};
    for (std::size_t k = 0; k < sizes.size(); ++k) {
        const auto& nl = records[2 * k];
        const auto& li = records[2 * k + 1];
        write_train_csv(ctx.file("runs/m" + pad(sizes[k]) + "_nonlinear.csv"), nl);
        write_train_csv(ctx.file("runs/m" + pad(sizes[k]) + "_linearized.csv"), li);
        const auto dn = distance_metrics(nl.initial_params, nl.final_params);
        const auto dl = distance_metrics(li.initial_params, li.final_params);
        summary.rows.push_back({csv::integer(static_cast<std::int64_t>(sizes[k])), csv::real(nl.test_acc.back()),
                                csv::real(li.test_acc.back()), opt_int(iterations_to_loss(nl)),
                                opt_int(iterations_to_loss(li)), csv::real(dn.l2), csv::real(dn.cosine_distance),
                                csv::real(dl.l2), csv::real(dl.cosine_distance)});
    }
    csv::write(ctx.file("summary.csv"), summary);
}

std::vector<std::size_t> checkpoint_schedule(const Node& root, const TrainConfig& cfg) {
    std::vector<std::size_t> epochs;
    if (root.at("train").has("checkpoint_epochs")) {
        epochs = cfg.checkpoint_epochs;
    } else {
        for (auto e : kDefaultCheckpointEpochs)
            if (e <= cfg.epochs) epochs.push_back(e);
    }
    epochs.push_back(0);
    epochs.push_back(cfg.epochs);
    std::sort(epochs.begin(), epochs.end());
    epochs.erase(std::unique(epochs.begin(), epochs.end()), epochs.end());
    return epochs;
}

void run_rotation_trace(Context& ctx) {
    ctx.root.allow(keys({"network", "init_seed", "data", "task", "train_m", "test_m", "split_seed", "train", "K",
                         "probes"}));
    const auto net = network_setup(ctx);
    const auto train_m = positive(ctx.root, "train_m");
    const auto test_m = ctx.root.opt<std::uint64_t>("test_m", 0);
    const Node task = ctx.root.at("task");
    const bool eigen_task = task.req<std::string>("generator") == "eigenfunction";
    if (eigen_task && test_m != 0)
        ctx.root.at("test_m").fail("eigenfunction rotation traces use the training set only; set test_m to 0");
    const auto k = ctx.root.opt<std::uint64_t>("K", kDefaultTopK);
    const auto n_probes = ctx.root.opt<std::uint64_t>("probes", kDefaultProbeCount);
    auto cfg = parse_train(ctx.root.at("train"));
    cfg.checkpoint_epochs = checkpoint_schedule(ctx.root, cfg);
    ctx.seeds["train_seed"] = cfg.seed;

    const auto p = prepare_task(ctx, net, train_m, test_m);
    if (k < 1 || k > p.train.size()) ctx.root.at("K").fail("outside [1, train_m]");
    if (n_probes > p.train.size()) ctx.root.at("probes").fail("exceeds train_m");
    const EigenSystem eig0 = p.eig ? *p.eig : eigendecompose(gram(net.spec, net.theta0, p.train, ctx.gram_options()));

    const auto rec = train(net.spec, net.theta0, p.train, p.test, cfg);
    write_train_csv(ctx.file("train.csv"), rec);

    std::size_t j_max = n_probes;
    std::size_t target = 0;
    if (eigen_task) {
        target = p.info["index"].get<std::size_t>();
        j_max = std::max(j_max, target);
    }
    Matrix probes(static_cast<Eigen::Index>(p.train.size()), static_cast<Eigen::Index>(1 + n_probes));
    std::vector<std::string> names = {"y"};
    probes.col(0) = *p.train.labels;
    for (std::size_t j = 1; j <= n_probes; ++j) {
        probes.col(static_cast<Eigen::Index>(j)) = eig0.eigenfunction(j);
        names.push_back("phi" + std::to_string(j));
    }
    GramOptions g = ctx.gram_options();
    const auto trace = track_rotation(net.spec, rec.checkpoints, p.train, *p.train.labels, k, probes, names, g);
    write_rotation_csv(ctx.file("rotation.csv"), trace);

    const Vector alpha_t = alignment_spectrum(net.spec, rec.final_params, p.train, eig0, j_max);
    csv::Table spec_table;
    spec_table.header = {"j", "lambda0", "alpha_final", "ratio"};
    std::vector<double> others;
    double target_ratio = std::nan("");
    for (std::size_t j = 1; j <= j_max; ++j) {
        const double l0 = eig0.eigenvalues[static_cast<Eigen::Index>(j - 1)];
        const double a = alpha_t[static_cast<Eigen::Index>(j - 1)];
        const double ratio = l0 > 0.0 ? a / l0 : std::nan("");
        spec_table.rows.push_back({csv::integer(static_cast<std::int64_t>(j)), csv::real(l0), csv::real(a), csv::real(ratio)});
        if (j == target) target_ratio = ratio;
        else if (!std::isnan(ratio)) others.push_back(ratio);
    }
    csv::write(ctx.file("spectrum.csv"), spec_table);

    json s;
    s["K"] = k;
    s["energy_initial"] = trace.energy_concentration.front();
    s["energy_final"] = trace.energy_concentration.back();
    s["jacobian_norm_initial"] = trace.jacobian_norm.front();
    s["jacobian_norm_final"] = trace.jacobian_norm.back();
    s["final_train_loss"] = rec.train_loss.back();
    if (eigen_task) {
        s["target_index"] = target;
        s["target_ratio"] = target_ratio;
        s["median_other_ratio"] = others.empty() ? std::nan("") : median(others);
    }
    std::size_t failed = 0;
    for (const auto& f : trace.failures) failed += !f.empty();
    s["failed_checkpoints"] = failed;
    write_summary(ctx, "summary.csv", s);
    ctx.results = s;
}

void run_kernel_transfer(Context& ctx) {
    ctx.root.allow(keys({"network", "init_seed", "data", "task", "train_m", "test_m", "split_seed", "pretrain", "train",
                         "loss_threshold"}));
    const auto net = network_setup(ctx);
    const auto train_m = positive(ctx.root, "train_m");
    const auto test_m = positive(ctx.root, "test_m");
    auto pre = parse_train(ctx.root.at("pretrain"));
    pre.model_kind = ModelKind::nonlinear;
    pre.record_batch_losses = true;
    pre.checkpoint_epochs = checkpoint_schedule(Node(json{{"train", ctx.root.at("pretrain").raw()}}, "$"), pre);
    const auto cfg = parse_train(ctx.root.at("train"));
    const double threshold = ctx.root.opt<double>("loss_threshold", kDefaultLossThreshold);
    if (!(threshold > 0.0)) ctx.root.at("loss_threshold").fail("must be positive");
    ctx.seeds["pretrain_seed"] = pre.seed;
    ctx.seeds["train_seed"] = cfg.seed;

    const auto p = prepare_task(ctx, net, train_m, test_m);
    const auto rec = train(net.spec, net.theta0, p.train, p.test, pre);
    write_train_csv(ctx.file("pretrain.csv"), rec);
    const auto rows = pretrained_kernel_transfer(net.spec, rec.checkpoints, p.train, p.test, cfg, &rec, threshold,
                                                 ctx.threads);
    write_transfer_csv(ctx.file("transfer.csv"), rows);
}

Vector stein_direction(const Node& n, const Setup& net) {
    const auto kind = n.req<std::string>("kind");
    const auto d = static_cast<Eigen::Index>(net.spec.input_dim);
    if (kind == "axis") {
        n.allow({"kind", "index"});
        const auto i = n.req<std::uint64_t>("index");
        if (i < 1 || i > net.spec.input_dim) n.at("index").fail("outside [1, d]");
        return Vector::Unit(d, static_cast<Eigen::Index>(i - 1));
    }
    if (kind == "nad") {
        n.allow({"kind", "index"});
        return nad_basis(net.spec, net.theta0).direction(n.req<std::uint64_t>("index"));
    }
    if (kind == "vector") {
        n.allow({"kind", "values"});
        const auto v = n.at("values").get<std::vector<double>>();
        if (static_cast<Eigen::Index>(v.size()) != d) n.at("values").fail("length differs from input_dim");
        return Eigen::Map<const Vector>(v.data(), d);
    }
    if (kind == "random") {
        n.allow({"kind", "seed"});
        const auto ds = synth_gaussian(net.spec.input_dim, 1, n.opt<std::uint64_t>("seed", 0));
        const Vector u = ds.samples.row(0).transpose();
        return u / u.norm();
    }
    n.at("kind").fail("unknown direction kind '" + kind + "' (expected axis, nad, vector or random)");
}

void run_stein_check(Context& ctx) {
    ctx.root.allow(keys({"network", "init_seed", "direction", "sample_counts", "seeds"}));
    const auto net = network_setup(ctx);
    const Vector u = ctx.root.has("direction") ? stein_direction(ctx.root.at("direction"), net)
                                               : Vector(Vector::Unit(static_cast<Eigen::Index>(net.spec.input_dim), 0));
    const auto counts = ctx.root.opt<std::vector<std::size_t>>("sample_counts", {200000});
    const auto seeds = ctx.root.opt<std::vector<std::size_t>>("seeds", {0, 1, 2, 3, 4});
    ctx.seeds["stein_seeds"] = seeds;
    csv::Table t;
    t.header = {"n_samples", "seed", "mc_lhs", "analytic_rhs", "rel_err"};
    for (auto n : counts)
        for (auto s : seeds) {
            const auto r = stein_check(net.spec, net.theta0, u, n, s, ctx.threads);
            t.rows.push_back({csv::integer(static_cast<std::int64_t>(n)), csv::integer(static_cast<std::int64_t>(s)),
                              csv::real(r.mc_lhs), csv::real(r.analytic_rhs), csv::real(r.rel_err)});
        }
    csv::write(ctx.file("stein.csv"), t);
}

const std::map<std::string, void (*)(Context&)>& templates() {
    static const std::map<std::string, void (*)(Context&)> t = {
        {"train", run_train},
        {"eigenfunction_sweep", run_eigenfunction_sweep},
        {"nad_sweep", run_nad_sweep},
        {"sample_size_sweep", run_sample_size_sweep},
        {"rotation_trace", run_rotation_trace},
        {"kernel_transfer", run_kernel_transfer},
        {"stein_check", run_stein_check},
    };
    return t;
}

json output_entries(const Context& ctx) {
    json list = json::array();
    for (const auto& rel : ctx.outputs) {
        const auto p = ctx.out / rel;
        if (!fs::exists(p)) continue;
        list.push_back({{"path", rel}, {"sha256", sha256_file(p)}, {"bytes", fs::file_size(p)}});
    }
    return list;
}

json input_entries(const Context& ctx) {
    json list = json::array();
    for (const auto& p : ctx.inputs) {
        if (!fs::exists(p)) continue;
        list.push_back({{"path", p.string()}, {"sha256", sha256_file(p)}});
    }
    return list;
}

}  // namespace

NetworkSpec parse_network(const Node& n) {
    n.allow({"input_dim", "hidden_widths", "activation", "bias", "input_scale"});
    NetworkSpec s;
    s.input_dim = positive(n, "input_dim");
    if (n.has("hidden_widths")) {
        s.hidden_widths = n.at("hidden_widths").get<std::vector<std::size_t>>();
        for (std::size_t i = 0; i < s.hidden_widths.size(); ++i)
            if (s.hidden_widths[i] == 0) n.at("hidden_widths").at(i).fail("must be positive");
    }
    if (n.has("activation")) {
        try {
            s.activation = activation_from_string(n.req<std::string>("activation"));
        } catch (const ConfigError& e) {
            n.at("activation").fail(e.what());
        }
    }
    s.bias = n.opt<bool>("bias", true);
    if (n.has("input_scale")) s.input_scale = n.at("input_scale").get<std::vector<double>>();
    try {
        s.validate();
    } catch (const Error& e) {
        n.fail(e.what());
    }
    return s;
}

Dataset build_dataset(const Node& n, const fs::path& base_dir) { return build_dataset_impl(n, base_dir, nullptr); }

fs::path resolve_output_dir(const json& config, const fs::path& override_dir) {
    if (!override_dir.empty()) return override_dir;
    const Node root(config, "$");
    fs::path dir = root.opt<std::string>("output_dir", "ntklab-out/" + root.opt<std::string>("id", "run"));
    if (dir.is_absolute()) return dir;
    if (const char* env = std::getenv("NTKLAB_OUTPUT_ROOT"); env && *env) return fs::path(env) / dir;
    return dir;
}

json run(const json& config, const fs::path& base_dir, const fs::path& output_override) {
    const Node root(config, "$");
    if (!config.is_object()) root.fail("config must be a JSON object");
    const auto experiment = root.req<std::string>("experiment");
    const auto it = templates().find(experiment);
    if (it == templates().end()) {
        std::string names;
        for (const auto& [k, v] : templates()) names += (names.empty() ? "" : ", ") + k;
        root.at("experiment").fail("unknown template '" + experiment + "' (expected one of " + names + ")");
    }
    if (root.has("id")) root.at("id").get<std::string>();

    Context ctx{root, resolve_output_dir(config, output_override), base_dir, 1, {}, {}, json::object(), json::object()};
    ctx.threads = root.has("threads") ? static_cast<unsigned>(positive(root, "threads")) : default_threads();
    fs::create_directories(ctx.out);

    const auto start = std::chrono::steady_clock::now();
    json manifest;
    manifest["id"] = root.opt<std::string>("id", experiment);
    manifest["experiment"] = experiment;
    manifest["tool_version"] = kToolVersion;
    manifest["config"] = config;
    manifest["config_sha256"] = sha256_hex(config.dump());
    auto finish = [&](const std::string& status, const std::string& error) {
        manifest["status"] = status;
        if (!error.empty()) manifest["error"] = error;
        manifest["seeds"] = ctx.seeds;
        manifest["results"] = ctx.results;
        manifest["inputs"] = input_entries(ctx);
        manifest["outputs"] = output_entries(ctx);
        manifest["threads"] = ctx.threads;
        manifest["wall_clock_seconds"] =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::ofstream(ctx.out / "manifest.json") << manifest.dump(2) << '\n';
    };
    try {
        it->second(ctx);
    } catch (const std::exception& e) {
        finish("failed", e.what());
        throw;
    }
    finish("complete", "");
    return manifest;
}

json run_file(const fs::path& config_file, const fs::path& output_override) {
    std::ifstream in(config_file);
    if (!in) throw ConfigError("cannot open config file " + config_file.string());
    json config;
    try {
        in >> config;
    } catch (const json::exception& e) {
        throw ConfigError("config " + config_file.string() + " is not valid JSON: " + e.what());
    }
    return run(config, config_file.parent_path(), output_override);
}

// ---------------------------------------------------------------------------
// Report

namespace {

json load_manifest(const fs::path& target, fs::path& dir) {
    fs::path path = target;
    if (fs::is_directory(target)) {
        if (fs::is_empty(target)) throw DataError("report: directory " + target.string() + " is empty");
        path = target / "manifest.json";
    }
    if (!fs::exists(path)) throw DataError("report: no manifest at " + path.string());
    dir = path.parent_path();
    std::ifstream in(path);
    json m;
    try {
        in >> m;
    } catch (const json::exception& e) {
        throw DataError("report: corrupt manifest " + path.string() + ": " + e.what());
    }
    if (!m.contains("experiment") || !m.contains("outputs")) throw DataError("report: manifest lacks experiment/outputs");
    if (m.value("status", "") != "complete") throw DataError("report: run did not complete (" + m.value("error", "") + ")");
    for (const auto& o : m.at("outputs")) {
        const auto p = dir / o.at("path").get<std::string>();
        if (!fs::exists(p)) throw DataError("report: missing output " + p.string());
        if (sha256_file(p) != o.at("sha256").get<std::string>()) throw DataError("report: hash mismatch for " + p.string());
    }
    return m;
}

std::vector<double> column_values(const csv::Table& t, const std::string& name) {
    std::vector<double> v;
    const auto c = t.column(name);
    for (const auto& r : t.rows) v.push_back(as_rank_value(r.at(c)));
    return v;
}

csv::Table project(const csv::Table& t, const std::vector<std::string>& cols) {
    csv::Table out;
    out.header = cols;
    std::vector<std::size_t> idx;
    for (const auto& c : cols) idx.push_back(t.column(c));
    for (const auto& r : t.rows) {
        csv::Row row;
        for (auto i : idx) row.push_back(r.at(i));
        out.rows.push_back(std::move(row));
    }
    return out;
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

Report report(const fs::path& manifest_or_dir) {
    fs::path dir;
    const json m = load_manifest(manifest_or_dir, dir);
    Report r;
    r.experiment = m.at("experiment").get<std::string>();
    const auto& e = r.experiment;
    if (e == "eigenfunction_sweep") {
        const auto t = csv::read(dir / "summary.csv");
        r.table = project(t, {"j", "lambda", "acc_nonlinear", "acc_linear"});
        const auto j = column_values(t, "j");
        r.statistics["spearman_j_acc_nonlinear"] = finite_or_null(spearman(j, column_values(t, "acc_nonlinear")));
        r.statistics["spearman_j_acc_linear"] = finite_or_null(spearman(j, column_values(t, "acc_linear")));
        r.statistics["spearman_j_iters_nonlinear"] = finite_or_null(spearman(j, column_values(t, "iters_nonlinear")));
        r.statistics["spearman_j_l2_nonlinear"] = finite_or_null(spearman(j, column_values(t, "l2_nonlinear")));
    } else if (e == "nad_sweep") {
        const auto t = csv::read(dir / "nad_sweep.csv");
        r.table = project(t, {"nad_index", "s2", "acc_nonlinear", "acc_linear"});
        auto s2 = column_values(t, "s2");
        for (auto& v : s2) v = -v;
        r.statistics["spearman_neg_s2_acc_linear"] = finite_or_null(spearman(s2, column_values(t, "acc_linear")));
        r.statistics["spearman_index_acc_linear"] =
            finite_or_null(spearman(column_values(t, "nad_index"), column_values(t, "acc_linear")));
    } else if (e == "sample_size_sweep") {
        const auto t = csv::read(dir / "summary.csv");
        r.table = project(t, {"train_m", "acc_nonlinear", "acc_linear", "l2_nonlinear", "cosine_nonlinear"});
        const auto mm = column_values(t, "train_m");
        r.statistics["spearman_m_acc_nonlinear"] = finite_or_null(spearman(mm, column_values(t, "acc_nonlinear")));
        r.statistics["spearman_m_acc_linear"] = finite_or_null(spearman(mm, column_values(t, "acc_linear")));
    } else if (e == "rotation_trace") {
        r.table = csv::read(dir / "rotation.csv");
        const auto s = csv::read(dir / "summary.csv");
        for (const auto& row : s.rows)
            r.statistics[row.at(0)] = row.at(1).empty() ? json(nullptr) : json(csv::parse_real(row.at(1)));
    } else if (e == "kernel_transfer") {
        r.table = csv::read(dir / "transfer.csv");
    } else if (e == "stein_check") {
        const auto t = csv::read(dir / "stein.csv");
        std::map<std::int64_t, std::vector<double>> by_n;
        const auto cn = t.column("n_samples");
        const auto ce = t.column("rel_err");
        for (const auto& row : t.rows) by_n[std::stoll(row.at(cn))].push_back(csv::parse_real(row.at(ce)));
        r.table.header = {"n_samples", "median_rel_err"};
        for (const auto& [n, v] : by_n) r.table.rows.push_back({csv::integer(n), csv::real(median(v))});
    } else if (e == "train") {
        r.table = csv::read(dir / "train.csv");
    } else {
        throw DataError("report: unknown experiment '" + e + "' in manifest");
    }
    return r;
}

}  // namespace ntk::exp
