#include "hgen/io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

static_assert(std::endian::native == std::endian::little, "raw array files assume a little-endian host");

namespace hgen {
namespace {

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

std::vector<char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

void ensure_directory(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
  // Probe writability so failures name the directory rather than a file in it.
  const fs::path probe = dir / ".write_probe";
  {
    std::ofstream out(probe);
    if (!out) throw IoError("directory is not writable: " + dir.string());
  }
  fs::remove(probe, ec);
}

double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

void write_f32(const fs::path& path, std::span<const double> values) {
  std::vector<float> buf(values.size());
  std::transform(values.begin(), values.end(), buf.begin(), [](double v) { return static_cast<float>(v); });
  auto out = open_out(path);
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<double> read_f32(const fs::path& path, std::size_t expected_count) {
  const auto bytes = read_bytes(path);
  if (bytes.size() != expected_count * sizeof(float))
    throw IoError(path.string() + ": expected " + std::to_string(expected_count) + " float32 values, found " +
                  std::to_string(bytes.size()) + " bytes");
  std::vector<double> out(expected_count);
  for (std::size_t i = 0; i < expected_count; ++i) {
    float f;
    std::memcpy(&f, bytes.data() + i * sizeof(float), sizeof(float));
    out[i] = f;
  }
  return out;
}

void write_u8(const fs::path& path, std::span<const std::uint8_t> values) {
  auto out = open_out(path);
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<std::uint8_t> read_u8(const fs::path& path, std::size_t expected_count) {
  const auto bytes = read_bytes(path);
  if (bytes.size() != expected_count)
    throw IoError(path.string() + ": expected " + std::to_string(expected_count) + " bytes, found " +
                  std::to_string(bytes.size()));
  return std::vector<std::uint8_t>(bytes.begin(), bytes.end());
}

void write_json(const fs::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

Json read_json(const fs::path& path) {
  try {
    return Json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  const auto bytes = read_bytes(path);
  return std::string(bytes.begin(), bytes.end());
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void save_checkpoint(const fs::path& stem, nn::Module& module, const Json& meta) {
  Json layout = Json::array();
  std::vector<double> flat;
  for (auto& [name, v] : module.parameters()) {
    layout.push_back({{"name", name}, {"shape", v->shape()}, {"offset", flat.size()}});
    flat.insert(flat.end(), v->value().data.begin(), v->value().data.end());
  }
  {
    auto out = open_out(fs::path(stem.string() + ".bin"));
    out.write(reinterpret_cast<const char*>(flat.data()), static_cast<std::streamsize>(flat.size() * sizeof(double)));
    if (!out) throw IoError("write failed: " + stem.string() + ".bin");
  }
  Json j;
  j["meta"] = meta;
  j["dtype"] = "float64";
  j["count"] = flat.size();
  j["checksum"] = hex64(module.checksum());
  j["params"] = layout;
  write_json(fs::path(stem.string() + ".json"), j);
}

Json load_checkpoint(const fs::path& stem, nn::Module& module) {
  const Json j = read_json(fs::path(stem.string() + ".json"));
  const auto bytes = read_bytes(fs::path(stem.string() + ".bin"));
  const std::size_t count = j.at("count").get<std::size_t>();
  if (bytes.size() != count * sizeof(double)) throw IoError(stem.string() + ".bin: size does not match layout");
  auto params = module.parameters();
  const auto& layout = j.at("params");
  if (layout.size() != params.size())
    throw IoError(stem.string() + ": checkpoint has " + std::to_string(layout.size()) + " arrays, module expects " +
                  std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& [name, var] = params[i];
    if (layout[i].at("name").get<std::string>() != name ||
        layout[i].at("shape").get<std::vector<int>>() != var->shape())
      throw IoError(stem.string() + ": layout mismatch at " + name);
    const std::size_t offset = layout[i].at("offset").get<std::size_t>();
    auto& data = var->mutable_value().data;
    std::memcpy(data.data(), bytes.data() + offset * sizeof(double), data.size() * sizeof(double));
  }
  return j.at("meta");
}

void LossLog::add(int step, const std::string& term, double value) { rows_.push_back({step, term, value}); }

void LossLog::write_csv(const fs::path& path) const {
  std::ostringstream s;
  s << "step,term,value\n";
  char buf[64];
  for (const auto& r : rows_) {
    std::snprintf(buf, sizeof(buf), "%.17g", r.value);
    s << r.step << ',' << r.term << ',' << buf << '\n';
  }
  write_text(path, s.str());
}

double LossLog::mean(const std::string& term, int first, int last) const {
  double s = 0.0;
  int n = 0;
  for (const auto& r : rows_)
    if (r.term == term && r.step >= first && r.step <= last) {
      s += r.value;
      ++n;
    }
  return n ? s / n : std::nan("");
}

void write_png(const fs::path& path, int height, int width, std::span<const double> rgb) {
  if (rgb.size() != static_cast<std::size_t>(height) * width * 3) throw ContractError("write_png: size mismatch");
  FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (!fp) throw IoError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IoError("PNG encoding failed: " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, width, height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(static_cast<std::size_t>(width) * 3);
  for (int i = 0; i < height; ++i) {
    for (int k = 0; k < width * 3; ++k)
      row[k] = static_cast<png_byte>(std::lround(std::clamp(rgb[static_cast<std::size_t>(i) * width * 3 + k], 0.0, 1.0) * 255.0));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

RgbImage read_png(const fs::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str()))
    throw IoError("cannot read PNG " + path.string() + ": " + image.message);
  image.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&image);
    throw IoError("PNG decoding failed: " + path.string() + ": " + image.message);
  }
  RgbImage out{static_cast<int>(image.height), static_cast<int>(image.width), {}};
  out.rgb.reserve(buf.size());
  for (png_byte b : buf) out.rgb.push_back(b / 255.0);
  return out;
}

}  // namespace hgen
