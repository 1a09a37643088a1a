// ntklab command-line front end. Exit codes: 0 success, 2 config error,
// 3 data error, 4 numerical failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ntklab/binio.hpp"
#include "ntklab/csv.hpp"
#include "ntklab/dataset.hpp"
#include "ntklab/errors.hpp"
#include "ntklab/experiments.hpp"
#include "ntklab/kernel.hpp"
#include "ntklab/nads.hpp"
#include "ntklab/parallel.hpp"
#include "ntklab/spectral.hpp"
#include "ntklab/tasks.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json_arg(const std::string& arg, const std::string& what) {
    std::string text = arg;
    if (arg.empty() || arg.front() != '{') {
        std::ifstream in(arg);
        if (!in) throw ntk::ConfigError(what + ": cannot open " + arg);
        std::stringstream ss;
        ss << in.rdbuf();
        text = ss.str();
    }
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw ntk::ConfigError(what + ": invalid JSON: " + e.what());
    }
}

ntk::NetworkSpec network_arg(const std::string& arg) {
    const json j = read_json_arg(arg, "--network");
    return ntk::exp::parse_network(ntk::exp::Node(j, "--network"));
}

ntk::ParamVector params_arg(const ntk::NetworkSpec& spec, const std::string& params_file, std::uint64_t seed) {
    if (params_file.empty()) return ntk::init_params(spec, seed);
    const ntk::Matrix p = ntk::binio::read_rect(params_file, "NTKP");
    if (p.cols() != 1 || static_cast<std::size_t>(p.rows()) != spec.param_count())
        throw ntk::DataError("--params: expected " + std::to_string(spec.param_count()) + " parameters");
    return ntk::ParamVector(spec, p.col(0));
}

std::set<int> int_list(const std::string& s) {
    std::set<int> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            out.insert(std::stoi(tok));
        } catch (const std::exception&) {
            throw ntk::ConfigError("invalid integer list '" + s + "'");
        }
    }
    return out;
}

// "axis:k" or "nad:j" (1-based).
ntk::Vector direction_arg(const std::string& arg, const ntk::NetworkSpec& spec, const ntk::ParamVector& params) {
    const auto colon = arg.find(':');
    if (colon == std::string::npos) throw ntk::ConfigError("--direction: expected axis:K or nad:J");
    const auto kind = arg.substr(0, colon);
    std::size_t index = 0;
    try {
        index = std::stoul(arg.substr(colon + 1));
    } catch (const std::exception&) {
        throw ntk::ConfigError("--direction: invalid index in '" + arg + "'");
    }
    if (kind == "axis") {
        if (index < 1 || index > spec.input_dim) throw ntk::ConfigError("--direction: axis outside [1, d]");
        return ntk::Vector::Unit(static_cast<Eigen::Index>(spec.input_dim), static_cast<Eigen::Index>(index - 1));
    }
    if (kind == "nad") return ntk::nad_basis(spec, params).direction(index);
    throw ntk::ConfigError("--direction: unknown kind '" + kind + "'");
}

void print_table(const ntk::csv::Table& t) {
    auto line = [](const ntk::csv::Row& r) {
        for (std::size_t i = 0; i < r.size(); ++i) std::cout << (i ? "," : "") << r[i];
        std::cout << '\n';
    };
    line(t.header);
    for (const auto& r : t.rows) line(r);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ntklab: empirical neural tangent kernel laboratory"};
    app.require_subcommand(1);

    std::string config_path, out_dir;
    auto* run = app.add_subcommand("run", "Run an experiment config and write its outputs and manifest");
    run->add_option("config", config_path, "Experiment config (JSON)")->required();
    run->add_option("--out", out_dir, "Output directory (overrides the config's output_dir)");

    std::string report_target, report_out;
    auto* report = app.add_subcommand("report", "Summarize a finished run as a figure-shaped table");
    report->add_option("target", report_target, "manifest.json or its directory")->required();
    report->add_option("--out", report_out, "Also write the table to this CSV file");

    std::string network, data_path, params_path, out_path;
    std::uint64_t init_seed = 0;
    std::size_t block_size = 256, max_samples = 20000;
    auto* gram = app.add_subcommand("gram", "Compute the empirical NTK Gram matrix of a dataset");
    gram->add_option("--network", network, "Network spec (JSON file or inline object)")->required();
    gram->add_option("--data", data_path, "Dataset (NTKD)")->required();
    gram->add_option("--init-seed", init_seed, "Initialization seed")->capture_default_str();
    gram->add_option("--params", params_path, "Parameters (NTKP) instead of a fresh initialization");
    gram->add_option("--block-size", block_size, "Gram block size")->capture_default_str();
    gram->add_option("--max-samples", max_samples, "Sample cap")->capture_default_str();
    gram->add_option("--out", out_path, "Output Gram file (NTKG)")->required();

    std::string gram_path;
    std::size_t top = 10;
    auto* eig = app.add_subcommand("eig", "Eigendecompose a Gram matrix");
    eig->add_option("--gram", gram_path, "Gram file (NTKG)")->required();
    eig->add_option("--out", out_path, "Output stem")->required();
    eig->add_option("--top", top, "Eigenvalues to print")->capture_default_str();

    std::string mode = "at_origin";
    auto* nads = app.add_subcommand("nads", "Neural anisotropy directions of a network");
    nads->add_option("--network", network, "Network spec (JSON file or inline object)")->required();
    nads->add_option("--init-seed", init_seed, "Initialization seed")->capture_default_str();
    nads->add_option("--params", params_path, "Parameters (NTKP) instead of a fresh initialization");
    nads->add_option("--mode", mode, "at_origin or dataset_expectation")->capture_default_str();
    nads->add_option("--data", data_path, "Dataset (NTKD) for dataset_expectation");
    nads->add_option("--out", out_path, "Output stem")->required();

    std::size_t n_samples = 200000;
    std::uint64_t seed = 0;
    std::string direction = "nad:1";
    auto* stein = app.add_subcommand("stein", "Stein-identity check of the mixed Jacobian");
    stein->add_option("--network", network, "Network spec (JSON file or inline object)")->required();
    stein->add_option("--init-seed", init_seed, "Initialization seed")->capture_default_str();
    stein->add_option("--params", params_path, "Parameters (NTKP) instead of a fresh initialization");
    stein->add_option("--n", n_samples, "Monte-Carlo samples (even)")->capture_default_str();
    stein->add_option("--seed", seed, "Sampling seed")->capture_default_str();
    stein->add_option("--direction", direction, "axis:K or nad:J")->capture_default_str();

    std::string generator, images, labels, positive, class_filter;
    std::size_t d = 0, m = 0, index = 1, downsample = 0;
    double epsilon = 1.0, sigma = 1.0;
    auto* gen = app.add_subcommand("gen-task", "Generate a dataset (NTKD) for a task");
    gen->add_option("--generator", generator, "gaussian, class_group, eigenfunction or linear_nad")->required();
    gen->add_option("--d", d, "Input dimension (gaussian)");
    gen->add_option("--m", m, "Sample count (gaussian, linear_nad)");
    gen->add_option("--seed", seed, "Generator seed")->capture_default_str();
    gen->add_option("--data", data_path, "Source dataset (NTKD)");
    gen->add_option("--images", images, "Source IDX images");
    gen->add_option("--labels", labels, "Source IDX labels");
    gen->add_option("--classes", class_filter, "Comma-separated classes to keep");
    gen->add_option("--downsample", downsample, "Pool images to this side length");
    gen->add_option("--positive", positive, "Comma-separated positive classes (class_group)");
    gen->add_option("--network", network, "Network spec (eigenfunction, linear_nad with --direction nad:J)");
    gen->add_option("--init-seed", init_seed, "Initialization seed")->capture_default_str();
    gen->add_option("--index", index, "Eigenfunction index (eigenfunction)")->capture_default_str();
    gen->add_option("--direction", direction, "axis:K or nad:J (linear_nad)")->capture_default_str();
    gen->add_option("--epsilon", epsilon, "Class separation (linear_nad)")->capture_default_str();
    gen->add_option("--sigma", sigma, "Noise variance (linear_nad)")->capture_default_str();
    gen->add_option("--out", out_path, "Output dataset (NTKD)")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*run) {
            const auto manifest = ntk::exp::run_file(config_path, out_dir);
            std::cout << "status: " << manifest.at("status").get<std::string>() << '\n';
            for (const auto& o : manifest.at("outputs"))
                std::cout << o.at("sha256").get<std::string>() << "  " << o.at("path").get<std::string>() << '\n';
        } else if (*report) {
            const auto r = ntk::exp::report(report_target);
            print_table(r.table);
            if (!r.statistics.empty()) std::cerr << r.statistics.dump(2) << '\n';
            if (!report_out.empty()) ntk::csv::write(report_out, r.table);
        } else if (*gram) {
            const auto spec = network_arg(network);
            const auto params = params_arg(spec, params_path, init_seed);
            const auto ds = ntk::load_dataset(data_path);
            ntk::GramOptions o;
            o.block_size = block_size;
            o.max_samples = max_samples;
            o.threads = ntk::default_threads();
            const auto g = ntk::gram(spec, params, ds, o);
            ntk::save_gram(out_path, g);
            std::cout << "gram " << g.size() << "x" << g.size() << " trace " << ntk::csv::real(g.values.trace()) << '\n';
        } else if (*eig) {
            const auto g = ntk::load_gram(gram_path);
            const auto e = ntk::eigendecompose(g);
            ntk::save_eigensystem(out_path, e);
            for (std::size_t j = 0; j < std::min(top, e.size()); ++j)
                std::cout << j + 1 << ',' << ntk::csv::real(e.eigenvalues[static_cast<Eigen::Index>(j)]) << '\n';
        } else if (*nads) {
            const auto spec = network_arg(network);
            const auto params = params_arg(spec, params_path, init_seed);
            const auto nad_mode = ntk::nad_mode_from_string(mode);
            std::optional<ntk::Dataset> ds;
            if (!data_path.empty()) ds = ntk::load_dataset(data_path);
            const auto b = ntk::nad_basis(spec, params, nad_mode, ds ? &*ds : nullptr);
            ntk::save_nad_basis(out_path, b);
            for (std::size_t j = 0; j < b.dim(); ++j)
                std::cout << j + 1 << ',' << ntk::csv::real(b.singular_values[static_cast<Eigen::Index>(j)]) << '\n';
            if (b.tie_degenerate) std::cerr << "note: basis has tied singular values\n";
        } else if (*stein) {
            const auto spec = network_arg(network);
            const auto params = params_arg(spec, params_path, init_seed);
            const auto u = direction_arg(direction, spec, params);
            const auto r = ntk::stein_check(spec, params, u, n_samples, seed, ntk::default_threads());
            std::cout << "mc_lhs,analytic_rhs,rel_err\n"
                      << ntk::csv::real(r.mc_lhs) << ',' << ntk::csv::real(r.analytic_rhs) << ','
                      << ntk::csv::real(r.rel_err) << '\n';
        } else if (*gen) {
            auto source = [&]() {
                if (!data_path.empty()) return ntk::load_dataset(data_path);
                if (images.empty() || labels.empty())
                    throw ntk::ConfigError("gen-task: give --data or both --images and --labels");
                ntk::IdxOptions o;
                if (!class_filter.empty()) o.classes = int_list(class_filter);
                o.downsample = downsample;
                return ntk::load_idx_images(images, labels, o);
            };
            ntk::Dataset out;
            if (generator == "gaussian") {
                out = ntk::synth_gaussian(d, m, seed);
            } else if (generator == "class_group") {
                if (positive.empty()) throw ntk::ConfigError("gen-task: class_group needs --positive");
                out = ntk::class_group_labels(source(), int_list(positive));
            } else if (generator == "eigenfunction") {
                const auto spec = network_arg(network);
                const auto params = ntk::init_params(spec, init_seed);
                auto ds = source();
                ntk::GramOptions o;
                o.threads = ntk::default_threads();
                const auto e = ntk::eigendecompose(ntk::gram(spec, params, ds, o));
                out = ntk::label_with_eigenfunction(ds, e, index);
            } else if (generator == "linear_nad") {
                ntk::Vector u;
                if (direction.rfind("axis:", 0) == 0 && network.empty()) {
                    if (d == 0) throw ntk::ConfigError("gen-task: linear_nad along an axis needs --d or --network");
                    u = direction_arg(direction, ntk::NetworkSpec::linear(d), ntk::ParamVector());
                } else {
                    const auto spec = network_arg(network);
                    u = direction_arg(direction, spec, ntk::init_params(spec, init_seed));
                }
                out = ntk::linear_task(u, epsilon, sigma, m, seed);
            } else {
                throw ntk::ConfigError("gen-task: unknown generator '" + generator + "'");
            }
            ntk::save_dataset(out_path, out);
            std::cout << "wrote " << out.size() << " samples of dimension " << out.dim() << " to " << out_path << '\n';
        }
    } catch (const ntk::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const ntk::DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const ntk::DimensionError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const ntk::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
