#include "dalign/image.hpp"

#include <array>
#include <bit>
#include <cctype>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "dalign/errors.hpp"

namespace dalign {

static_assert(std::endian::native == std::endian::little,
              "binary raster formats are little-endian; big-endian hosts are not supported");

namespace {

std::vector<char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void spit(const std::filesystem::path& path, const std::string& header, const void* data,
          std::size_t bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  if (!out) throw IoError("write failed for " + path.string());
}

// Reads the next whitespace-delimited PPM header token, skipping comments.
std::string header_token(const std::vector<char>& buf, std::size_t& pos, const std::string& file) {
  while (pos < buf.size()) {
    if (buf[pos] == '#') {
      while (pos < buf.size() && buf[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(buf[pos]))) {
      ++pos;
    } else {
      break;
    }
  }
  std::string token;
  while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos]))) token += buf[pos++];
  if (token.empty()) throw FormatError(file + ": truncated PPM header");
  return token;
}

std::size_t parse_size(const std::string& token, const std::string& file) {
  try {
    std::size_t used = 0;
    const unsigned long v = std::stoul(token, &used);
    if (used != token.size()) throw FormatError(file + ": bad PPM header field " + token);
    return v;
  } catch (const std::logic_error&) {
    throw FormatError(file + ": bad PPM header field " + token);
  }
}

}  // namespace

void write_ppm(const std::filesystem::path& path, const RgbImage& image) {
  if (image.pixels.size() != image.width * image.height * 3) {
    throw DimensionError("RGB image buffer does not match its dimensions");
  }
  const std::string header =
      "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  spit(path, header, image.pixels.data(), image.pixels.size());
}

RgbImage read_ppm(const std::filesystem::path& path) {
  const std::vector<char> buf = slurp(path);
  const std::string file = path.string();
  std::size_t pos = 0;
  if (header_token(buf, pos, file) != "P6") throw FormatError(file + ": not a binary PPM (P6)");
  const std::size_t width = parse_size(header_token(buf, pos, file), file);
  const std::size_t height = parse_size(header_token(buf, pos, file), file);
  if (parse_size(header_token(buf, pos, file), file) != 255) {
    throw FormatError(file + ": only maxval 255 is supported");
  }
  ++pos;  // single whitespace byte before the raster
  RgbImage image(width, height);
  if (buf.size() < pos + image.pixels.size()) throw IntegrityError(file + ": truncated PPM raster");
  std::memcpy(image.pixels.data(), buf.data() + pos, image.pixels.size());
  return image;
}

void write_depth(const std::filesystem::path& path, const DepthMap& depth) {
  if (depth.values.size() != depth.width * depth.height) {
    throw DimensionError("depth buffer does not match its dimensions");
  }
  std::string header = "DPTH";
  const std::array<std::uint32_t, 2> dims = {static_cast<std::uint32_t>(depth.width),
                                              static_cast<std::uint32_t>(depth.height)};
  header.append(reinterpret_cast<const char*>(dims.data()), sizeof(dims));
  spit(path, header, depth.values.data(), depth.values.size() * sizeof(float));
}

DepthMap read_depth(const std::filesystem::path& path) {
  const std::vector<char> buf = slurp(path);
  const std::string file = path.string();
  if (buf.size() < 12 || std::memcmp(buf.data(), "DPTH", 4) != 0) {
    throw FormatError(file + ": missing DPTH magic");
  }
  std::uint32_t width = 0, height = 0;
  std::memcpy(&width, buf.data() + 4, 4);
  std::memcpy(&height, buf.data() + 8, 4);
  DepthMap depth(width, height);
  const std::size_t bytes = depth.values.size() * sizeof(float);
  if (buf.size() != 12 + bytes) {
    throw IntegrityError(file + ": expected " + std::to_string(bytes) + " depth bytes, found " +
                         std::to_string(buf.size() - 12));
  }
  std::memcpy(depth.values.data(), buf.data() + 12, bytes);
  return depth;
}

}  // namespace dalign
