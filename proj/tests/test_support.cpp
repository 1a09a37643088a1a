#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>

#include "ntklab/binio.hpp"
#include "ntklab/csv.hpp"
#include "ntklab/errors.hpp"
#include "ntklab/hashing.hpp"
#include "ntklab/random.hpp"
#include "ntklab/stats.hpp"
#include "test_util.hpp"

using namespace ntk;

TEST_CASE("spearman") {
    CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
    CHECK(spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
    CHECK(spearman({1, 2, 3}, {1, 3, 2}) == doctest::Approx(0.5));
    const double inf = std::numeric_limits<double>::infinity();
    CHECK(spearman({1, 2, 3}, {5, 9, inf}) == doctest::Approx(1.0));
    CHECK(std::isnan(spearman({1, 1, 1}, {1, 2, 3})));
    CHECK_THROWS(spearman({1, 2}, {1, std::nan("")}));
    CHECK(average_ranks({3, 1, 3}) == std::vector<double>{2.5, 1, 2.5});
    CHECK(median({3, 1, 2}) == 2.0);
    CHECK(median({4, 1, 2, 3}) == 2.5);
    CHECK_THROWS(median({}));
}

TEST_CASE("csv round trip") {
    csv::Table t;
    t.header = {"a", "b,c", "q\"uote"};
    t.rows = {{"1", "x\ny", ""}, {csv::real(0.1), csv::real(std::nan("")), csv::real(-1.0 / 0.0)}};
    const auto dir = test::scratch("csv");
    csv::write(dir / "t.csv", t);
    const auto back = csv::read(dir / "t.csv");
    CHECK(back.header == t.header);
    CHECK(back.rows == t.rows);
    CHECK(csv::parse_real(back.rows[1][0]) == 0.1);
    CHECK(std::isnan(csv::parse_real(back.rows[1][1])));
    CHECK(std::isinf(csv::parse_real(back.rows[1][2])));
    CHECK(back.column("b,c") == 1);
    CHECK_THROWS_AS(back.column("zzz"), DataError);
    CHECK(csv::real(1.0 / 3.0) == "0.33333333333333331");
}

TEST_CASE("binary framing") {
    const auto dir = test::scratch("bin");
    Matrix m(2, 3);
    m << 1, 2, 3, 4, 5, 6;
    binio::write_rect(dir / "r.bin", "NTKD", m);
    CHECK(binio::read_rect(dir / "r.bin", "NTKD") == m);
    CHECK(std::filesystem::file_size(dir / "r.bin") == 16 + 6 * 8);
    CHECK_THROWS_AS(binio::read_rect(dir / "r.bin", "NTKG"), DataError);
    std::filesystem::resize_file(dir / "r.bin", 30);
    CHECK_THROWS_AS(binio::read_rect(dir / "r.bin", "NTKD"), DataError);

    const Matrix sq = Matrix::Identity(3, 3);
    binio::write_square(dir / "s.bin", "NTKG", sq);
    CHECK(binio::read_square(dir / "s.bin", "NTKG") == sq);
    std::ifstream in(dir / "s.bin", std::ios::binary);
    char magic[4];
    in.read(magic, 4);
    CHECK(std::string(magic, 4) == "NTKG");

    const Vector v = test::vec({1.5, -2});
    binio::write_f64_array(dir / "v.bin", v);
    CHECK(binio::read_f64_array(dir / "v.bin") == v);
}

TEST_CASE("hashing and seeds") {
    CHECK(sha256_hex(std::string("abc")) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(mix_seed(1, 2) == mix_seed(1, 2));
    CHECK(mix_seed(1, 2) != mix_seed(2, 1));
    const auto p = permutation(10, 3);
    std::vector<std::size_t> sorted = p;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < 10; ++i) CHECK(sorted[i] == i);
    CHECK(permutation(10, 3) == p);
}
