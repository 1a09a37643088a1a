#pragma once

#include <cstdint>
#include <filesystem>
#include <string_view>

#include "ntklab/types.hpp"

namespace ntk::binio {

inline constexpr std::uint32_t kFormatVersion = 1;

// Square framing: 4-byte magic, u32 version, u32 m, then m*m little-endian
// f64 values in row-major order. Used for Gram matrices and eigenfunction
// tables (magic "NTKG").
void write_square(const std::filesystem::path& path, std::string_view magic, const Matrix& m);
Matrix read_square(const std::filesystem::path& path, std::string_view magic);

// Rectangular framing: 4-byte magic, u32 version, u32 rows, u32 cols, then
// rows*cols little-endian f64 values in row-major order. Used for datasets
// ("NTKD"), NAD bases ("NTKN") and parameter files ("NTKP").
void write_rect(const std::filesystem::path& path, std::string_view magic, const Matrix& m);
Matrix read_rect(const std::filesystem::path& path, std::string_view magic);

// Headerless little-endian f64 array.
void write_f64_array(const std::filesystem::path& path, const Vector& v);
Vector read_f64_array(const std::filesystem::path& path);

}  // namespace ntk::binio
