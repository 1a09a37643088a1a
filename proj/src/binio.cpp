#include "ntklab/binio.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include "ntklab/errors.hpp"

namespace ntk::binio {
namespace {

static_assert(std::endian::native == std::endian::little, "little-endian host assumed");

void check_magic(std::string_view magic) {
    if (magic.size() != 4) throw ConfigError("binary magic must be 4 characters");
}

void put_u32(std::ofstream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t get_u32(std::ifstream& in, const std::filesystem::path& path) {
    std::uint32_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), 4)) throw DataError("truncated header in " + path.string());
    return v;
}

std::ofstream open_out(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    return out;
}

std::ifstream open_in(const std::filesystem::path& path, std::string_view magic) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    char got[4];
    if (!in.read(got, 4)) throw DataError("truncated header in " + path.string());
    if (std::string_view(got, 4) != magic)
        throw DataError("bad magic in " + path.string() + ": expected " + std::string(magic));
    const auto version = get_u32(in, path);
    if (version != kFormatVersion)
        throw DataError("unsupported format version " + std::to_string(version) + " in " + path.string());
    return in;
}

void write_rows(std::ofstream& out, const Matrix& m) {
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) row[static_cast<std::size_t>(j)] = m(i, j);
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * 8));
    }
}

Matrix read_rows(std::ifstream& in, std::uint32_t rows, std::uint32_t cols, const std::filesystem::path& path) {
    RowMatrix m(rows, cols);
    const auto bytes = static_cast<std::streamsize>(static_cast<std::size_t>(rows) * cols * 8);
    if (bytes > 0 && !in.read(reinterpret_cast<char*>(m.data()), bytes))
        throw DataError("truncated payload in " + path.string());
    if (in.peek() != std::char_traits<char>::eof()) throw DataError("trailing bytes in " + path.string());
    return Matrix(m);
}

}  // namespace

void write_square(const std::filesystem::path& path, std::string_view magic, const Matrix& m) {
    check_magic(magic);
    if (m.rows() != m.cols()) throw DimensionError("write_square: matrix is not square");
    auto out = open_out(path);
    out.write(magic.data(), 4);
    put_u32(out, kFormatVersion);
    put_u32(out, static_cast<std::uint32_t>(m.rows()));
    write_rows(out, m);
    if (!out) throw DataError("write failed for " + path.string());
}

Matrix read_square(const std::filesystem::path& path, std::string_view magic) {
    check_magic(magic);
    auto in = open_in(path, magic);
    const auto m = get_u32(in, path);
    return read_rows(in, m, m, path);
}

void write_rect(const std::filesystem::path& path, std::string_view magic, const Matrix& m) {
    check_magic(magic);
    auto out = open_out(path);
    out.write(magic.data(), 4);
    put_u32(out, kFormatVersion);
    put_u32(out, static_cast<std::uint32_t>(m.rows()));
    put_u32(out, static_cast<std::uint32_t>(m.cols()));
    write_rows(out, m);
    if (!out) throw DataError("write failed for " + path.string());
}

Matrix read_rect(const std::filesystem::path& path, std::string_view magic) {
    check_magic(magic);
    auto in = open_in(path, magic);
    const auto rows = get_u32(in, path);
    const auto cols = get_u32(in, path);
    return read_rows(in, rows, cols, path);
}

void write_f64_array(const std::filesystem::path& path, const Vector& v) {
    auto out = open_out(path);
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * 8));
    if (!out) throw DataError("write failed for " + path.string());
}

Vector read_f64_array(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw DataError("cannot open " + path.string());
    const auto size = static_cast<std::size_t>(in.tellg());
    if (size % 8 != 0) throw DataError("f64 array size not a multiple of 8 in " + path.string());
    in.seekg(0);
    Vector v(static_cast<Eigen::Index>(size / 8));
    if (size > 0 && !in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(size)))
        throw DataError("truncated payload in " + path.string());
    return v;
}

}  // namespace ntk::binio
