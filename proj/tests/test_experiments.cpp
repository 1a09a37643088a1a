#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>

#include <nlohmann/json.hpp>

#include "ntklab/csv.hpp"
#include "ntklab/errors.hpp"
#include "ntklab/experiments.hpp"
#include "ntklab/hashing.hpp"
#include "test_util.hpp"

using namespace ntk;
using nlohmann::json;

namespace {

json minimal_train(const std::filesystem::path& out) {
    return {{"experiment", "train"},
            {"id", "minimal"},
            {"output_dir", out.string()},
            {"network", {{"input_dim", 2}, {"hidden_widths", json::array()}}},
            {"data", {{"source", "inline"}, {"samples", {{1, 0}, {-1, 0}}}, {"labels", {1, -1}}}},
            {"task", {{"generator", "dataset"}}},
            {"train_m", 2},
            {"test_m", 0},
            {"train", {{"epochs", 1}, {"batch_size", 2}}}};
}

json small_sweep(const std::filesystem::path& out) {
    return {{"experiment", "eigenfunction_sweep"},
            {"id", "sweep"},
            {"output_dir", out.string()},
            {"network", {{"input_dim", 3}, {"hidden_widths", {8}}, {"activation", "tanh"}}},
            {"data", {{"source", "gaussian"}, {"d", 3}, {"m", 40}, {"seed", 1}}},
            {"indices", {1, 2, 5}},
            {"train_m", 30},
            {"test_m", 10},
            {"train", {{"epochs", 2}, {"batch_size", 10}}}};
}

int run_cli(const std::string& args) {
    const int status = std::system((std::string(NTKLAB_CLI) + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string expect_config_error(const json& cfg) {
    try {
        exp::run(cfg);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST_CASE("minimal train config runs and is deterministic") {
    const auto dir = test::scratch("exp-min");
    const auto a = exp::run(minimal_train(dir / "a"));
    CHECK(a["status"] == "complete");
    CHECK(std::filesystem::exists(dir / "a" / "manifest.json"));
    CHECK(std::filesystem::exists(dir / "a" / "train.csv"));
    const auto rec = json::parse(std::ifstream(dir / "a" / "record.json"));
    CHECK(rec["config"]["learning_rate"] == 0.05);  // defaults are echoed
    CHECK(rec["config"]["momentum"] == 0.9);
    const auto b = exp::run(minimal_train(dir / "b"));
    REQUIRE(a["outputs"].size() == b["outputs"].size());
    for (std::size_t i = 0; i < a["outputs"].size(); ++i) {
        CHECK(a["outputs"][i]["path"] == b["outputs"][i]["path"]);
        CHECK(a["outputs"][i]["sha256"] == b["outputs"][i]["sha256"]);
    }
    const auto rep = exp::report(dir / "a");
    CHECK(rep.experiment == "train");
}

TEST_CASE("eigenfunction sweep writes six runs and a summary") {
    const auto dir = test::scratch("exp-sweep");
    const auto m = exp::run(small_sweep(dir));
    std::size_t runs = 0;
    for (const auto& e : std::filesystem::directory_iterator(dir / "runs")) runs += e.path().extension() == ".csv";
    CHECK(runs == 6);
    const auto t = csv::read(dir / "summary.csv");
    CHECK(t.rows.size() == 3);
    for (const auto* col : {"j", "lambda", "overlap", "acc_nonlinear", "acc_linear", "iters_nonlinear", "l2_nonlinear",
                            "cosine_nonlinear"})
        CHECK_NOTHROW(t.column(col));
    // Every listed output hash verifies.
    for (const auto& o : m["outputs"])
        CHECK(sha256_file(dir / o["path"].get<std::string>()) == o["sha256"].get<std::string>());

    const auto rep = exp::report(dir / "manifest.json");
    CHECK(rep.experiment == "eigenfunction_sweep");
    CHECK(rep.statistics.contains("spearman_j_acc_nonlinear"));
    CHECK(rep.table.rows.size() == 3);

    // Tampering with an output is caught.
    std::ofstream(dir / "summary.csv", std::ios::app) << "x";
    CHECK_THROWS_AS(exp::report(dir), DataError);
}

TEST_CASE("config errors name the offending path") {
    const auto dir = test::scratch("exp-err");
    auto c = minimal_train(dir);
    c.erase("network");
    CHECK(expect_config_error(c).find("$.network") != std::string::npos);

    c = minimal_train(dir);
    c["train"]["batch_size"] = "big";
    CHECK(expect_config_error(c).find("$.train.batch_size") != std::string::npos);

    c = minimal_train(dir);
    c["network"]["activation"] = "swish";
    CHECK(expect_config_error(c).find("$.network.activation") != std::string::npos);

    c = minimal_train(dir);
    c["bogus"] = 1;
    CHECK(expect_config_error(c).find("$.bogus") != std::string::npos);

    c = minimal_train(dir);
    c["experiment"] = "nope";
    CHECK(expect_config_error(c).find("$.experiment") != std::string::npos);
}

TEST_CASE("report on an empty directory is a data error") {
    const auto dir = test::scratch("exp-empty");
    CHECK_THROWS_AS(exp::report(dir), DataError);
}

TEST_CASE("cli exit codes") {
    const auto dir = test::scratch("cli");
    std::ofstream(dir / "ok.json") << minimal_train(dir / "ok").dump();
    CHECK(run_cli("run " + (dir / "ok.json").string()) == 0);
    CHECK(run_cli("report " + (dir / "ok").string()) == 0);

    auto bad = minimal_train(dir / "bad");
    bad.erase("network");
    std::ofstream(dir / "bad.json") << bad.dump();
    CHECK(run_cli("run " + (dir / "bad.json").string()) == 2);
    CHECK(run_cli("run " + (dir / "missing.json").string()) == 2);
    CHECK(run_cli("--no-such-flag") == 2);

    std::filesystem::create_directories(dir / "empty");
    CHECK(run_cli("report " + (dir / "empty").string()) == 3);

    auto mismatch = minimal_train(dir / "dim");
    mismatch["network"]["input_dim"] = 3;
    std::ofstream(dir / "dim.json") << mismatch.dump();
    CHECK(run_cli("run " + (dir / "dim.json").string()) == 3);

    CHECK(run_cli("gen-task --generator gaussian --d 3 --m 10 --seed 1 --out " + (dir / "g.ntkd").string()) == 0);
    CHECK(std::filesystem::exists(dir / "g.ntkd"));
}
