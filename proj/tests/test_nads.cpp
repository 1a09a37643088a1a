#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "ntklab/errors.hpp"
#include "ntklab/nads.hpp"
#include "ntklab/tasks.hpp"
#include "test_util.hpp"

using namespace ntk;

TEST_CASE("linear network: isotropic and tie-degenerate") {
    const auto spec = NetworkSpec::linear(4);
    const auto basis = nad_basis(spec, init_params(spec, 3));
    CHECK(basis.tie_degenerate);
    for (Eigen::Index j = 0; j < 4; ++j) CHECK(basis.singular_values[j] == doctest::Approx(1.0).epsilon(1e-12));
    // Orthonormal regardless of the tie.
    CHECK((basis.directions.transpose() * basis.directions - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("frozen input scale ranks the axes") {
    NetworkSpec spec = NetworkSpec::linear(3, false);
    spec.input_scale = {2, 3, 1};
    const auto basis = nad_basis(spec, ParamVector(spec, test::vec({1, 1, 1})));
    CHECK_FALSE(basis.tie_degenerate);
    CHECK(basis.singular_values == test::vec({3, 2, 1}));
    CHECK(basis.direction(1).isApprox(test::vec({0, 1, 0}), 1e-14));
    CHECK(basis.direction(2).isApprox(test::vec({1, 0, 0}), 1e-14));
    CHECK(basis.direction(3).isApprox(test::vec({0, 0, 1}), 1e-14));
    CHECK_THROWS_AS(basis.direction(0), ConfigError);
}

TEST_CASE("nad basis invariants on a gelu network") {
    const auto spec = NetworkSpec::mlp(6, {10, 8}, Activation::gelu);
    const auto p = init_params(spec, 2);
    const auto b = nad_basis(spec, p);
    CHECK(b.dim() == 6);
    CHECK((b.directions.transpose() * b.directions - Matrix::Identity(6, 6)).cwiseAbs().maxCoeff() <= 1e-12);
    for (Eigen::Index j = 1; j < 6; ++j) CHECK(b.singular_values[j - 1] >= b.singular_values[j]);
    for (std::size_t j = 1; j <= 6; ++j) {
        const Vector v = b.direction(j);
        for (Eigen::Index i = 0; i < 6; ++i) {
            if (std::abs(v[i]) > 1e-12) {
                CHECK(v[i] > 0.0);
                break;
            }
        }
        // ||M v_j|| = s_j.
        const Matrix m = mixed_jacobian(spec, p, Vector::Zero(6));
        CHECK(test::rel_err((m * v).norm(), b.singular_values[static_cast<Eigen::Index>(j - 1)]) <= 1e-10);
    }
    CHECK(b.network_fingerprint == p.fingerprint());
    CHECK(principal_angles(b, b, 3).cwiseAbs().maxCoeff() <= 1e-6);

    const auto ds = synth_gaussian(6, 50, 4);
    const auto be = nad_basis(spec, p, NadMode::dataset_expectation, &ds);
    CHECK(be.mode == NadMode::dataset_expectation);
    CHECK_THROWS_AS(nad_basis(spec, p, NadMode::dataset_expectation), ConfigError);
}

TEST_CASE("relu networks are rejected") {
    const auto spec = NetworkSpec::mlp(3, {4}, Activation::relu);
    CHECK_THROWS_AS(nad_basis(spec, init_params(spec, 0)), ConfigError);
}

TEST_CASE("predictor alignment examples") {
    NetworkSpec spec = NetworkSpec::linear(3, false);
    spec.input_scale = {1, 2, 1};
    const ParamVector p(spec, test::vec({1, 1, 1}));
    CHECK(predictor_alignment(spec, p, test::vec({0, 1, 0}), AlignmentMode::analytic) ==
          doctest::Approx(4.0).epsilon(1e-14));
    CHECK(predictor_alignment(spec, p, test::vec({0, 1, 0}), AlignmentMode::monte_carlo, 1000, 1) ==
          doctest::Approx(4.0).epsilon(1e-10));
    CHECK_THROWS_AS(predictor_alignment(spec, p, test::vec({0, 2, 0}), AlignmentMode::analytic), ConfigError);
}

TEST_CASE("Monte Carlo alignment matches the dataset-expectation analytic value") {
    const auto spec = NetworkSpec::mlp(4, {8}, Activation::gelu);
    const auto p = init_params(spec, 5);
    const auto ds = synth_gaussian(4, 4000, 17);
    const auto b = nad_basis(spec, p, NadMode::dataset_expectation, &ds);
    for (std::size_t j : {1, 4}) {
        const Vector u = b.direction(j);
        const double analytic =
            predictor_alignment(spec, p, u, AlignmentMode::analytic, 0, 0, NadMode::dataset_expectation, &ds);
        const double mc = predictor_alignment(spec, p, u, AlignmentMode::monte_carlo, 200000, 3);
        CHECK(test::rel_err(mc, analytic) <= 0.05);
    }
}

TEST_CASE("moment-matched Gaussian samples") {
    const auto x = moment_matched_gaussian(5, 2000, 9);
    CHECK(x.rows() == 2000);
    CHECK(x.colwise().mean().cwiseAbs().maxCoeff() <= 1e-12);
    const Matrix cov = x.transpose() * x / 2000.0;
    CHECK((cov - Matrix::Identity(5, 5)).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK(moment_matched_gaussian(5, 2000, 9) == x);
    CHECK_THROWS_AS(moment_matched_gaussian(5, 2001, 9), ConfigError);
    CHECK_THROWS_AS(moment_matched_gaussian(5, 8, 9), ConfigError);
}

TEST_CASE("Stein identity: exact for linear networks") {
    const auto spec = NetworkSpec::linear(5);
    const auto p = init_params(spec, 1);
    Vector u = Vector::Zero(5);
    u[2] = 1.0;
    const auto r = stein_check(spec, p, u, 1000, 0);
    CHECK(r.rel_err <= 1e-10);
    CHECK(r.analytic_rhs == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("Stein identity: Monte Carlo convergence on a gelu network") {
    const auto spec = NetworkSpec::mlp(4, {16}, Activation::gelu);
    const auto p = init_params(spec, 8);
    const Vector u = nad_basis(spec, p).direction(1);
    CHECK(stein_check(spec, p, u, 200000, 0).rel_err <= 0.05);

    auto median_err = [&](std::size_t n) {
        std::vector<double> errs;
        for (std::uint64_t s = 0; s < 5; ++s) errs.push_back(stein_check(spec, p, u, n, 100 + s).rel_err);
        std::sort(errs.begin(), errs.end());
        return errs[2];
    };
    CHECK(median_err(20000) < median_err(2000));
}

TEST_CASE("nad basis persistence") {
    const auto spec = NetworkSpec::mlp(3, {5}, Activation::tanh);
    const auto b = nad_basis(spec, init_params(spec, 1));
    const auto dir = test::scratch("nads");
    save_nad_basis(dir / "nads", b);
    const auto back = load_nad_basis(dir / "nads");
    CHECK(back.directions == b.directions);
    CHECK(back.singular_values == b.singular_values);
    CHECK(back.network_fingerprint == b.network_fingerprint);
    CHECK(back.mode == b.mode);
    CHECK(to_string(nad_mode_from_string("dataset_expectation")) == "dataset_expectation");
    CHECK_THROWS_AS(nad_mode_from_string("nope"), ConfigError);
}

TEST_CASE("nad experiment produces one row per index") {
    const auto spec = NetworkSpec::mlp(4, {6}, Activation::tanh);
    const auto p = init_params(spec, 1);
    const auto b = nad_basis(spec, p);
    NadExperimentConfig cfg;
    cfg.indices = {1, 4};
    cfg.train_m = 40;
    cfg.test_m = 20;
    cfg.train.epochs = 2;
    cfg.train.batch_size = 10;
    const auto rows = nad_experiment(spec, p, b, cfg);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].index == 1);
    CHECK(rows[1].s2 == doctest::Approx(std::pow(b.singular_values[3], 2)));
    for (const auto& r : rows) {
        CHECK(r.acc_linear >= 0.0);
        CHECK(r.acc_nonlinear <= 1.0);
    }
    const auto dir = test::scratch("nadcsv");
    write_nad_csv(dir / "n.csv", rows);
    CHECK(std::filesystem::file_size(dir / "n.csv") > 0);
}
