#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "hgen/nn.hpp"

namespace hgen {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void ensure_directory(const fs::path& dir);

/// Raw little-endian float32 arrays.
void write_f32(const fs::path& path, std::span<const double> values);
std::vector<double> read_f32(const fs::path& path, std::size_t expected_count);
void write_u8(const fs::path& path, std::span<const std::uint8_t> values);
std::vector<std::uint8_t> read_u8(const fs::path& path, std::size_t expected_count);

/// Rounds through float32, matching what a write_f32/read_f32 trip returns.
double to_f32(double v);

void write_json(const fs::path& path, const Json& j);
Json read_json(const fs::path& path);
void write_text(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);

std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t v);

/// Weights go to `<stem>.bin` (float64, collection order) and the layout
/// plus `meta` to `<stem>.json`.
void save_checkpoint(const fs::path& stem, nn::Module& module, const Json& meta);
/// Restores weights in place and returns the stored metadata. Names and
/// shapes must match the module exactly.
Json load_checkpoint(const fs::path& stem, nn::Module& module);

/// Training curves as (step, term, value) rows.
class LossLog {
 public:
  void add(int step, const std::string& term, double value);
  void write_csv(const fs::path& path) const;
  /// Mean of `term` over the rows whose step lies in [first, last].
  double mean(const std::string& term, int first, int last) const;
  std::size_t rows() const { return rows_.size(); }

 private:
  struct Row {
    int step;
    std::string term;
    double value;
  };
  std::vector<Row> rows_;
};

/// 8-bit RGB PNG from an H*W*3 array of values in [0,1].
void write_png(const fs::path& path, int height, int width, std::span<const double> rgb);

struct RgbImage {
  int height = 0, width = 0;
  std::vector<double> rgb;  ///< H*W*3 in [0,1]
};
/// Any PNG color type, converted to 8-bit RGB without alpha.
RgbImage read_png(const fs::path& path);

}  // namespace hgen
