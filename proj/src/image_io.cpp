#include "dalign/image_io.hpp"

#include <cctype>
#include <string>

#include "dalign/binary_io.hpp"
#include "dalign/error.hpp"

namespace dalign {

namespace {

std::vector<std::uint8_t> encode_netpbm(const char* magic, std::size_t w, std::size_t h,
                                        const std::vector<std::uint8_t>& pixels) {
  const std::string header =
      std::string(magic) + "\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), pixels.begin(), pixels.end());
  return out;
}

struct Header {
  std::size_t width = 0, height = 0, maxval = 0, data_offset = 0;
};

Header parse_header(const std::vector<std::uint8_t>& bytes, const char* magic) {
  if (bytes.size() < 2 || bytes[0] != magic[0] || bytes[1] != magic[1]) {
    throw FormatError(std::string("netpbm: expected magic ") + magic + " at byte offset 0");
  }
  std::size_t pos = 2;
  auto next_number = [&]() -> std::size_t {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) {
      throw FormatError("netpbm: malformed header at byte offset " + std::to_string(pos));
    }
    std::size_t v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) v = v * 10 + (bytes[pos++] - '0');
    return v;
  };
  Header h;
  h.width = next_number();
  h.height = next_number();
  h.maxval = next_number();
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) {
    throw FormatError("netpbm: missing separator after header at byte offset " +
                      std::to_string(pos));
  }
  h.data_offset = pos + 1;
  if (h.maxval != 255) throw FormatError("netpbm: only maxval 255 is supported");
  return h;
}

}  // namespace

std::vector<std::uint8_t> encode_pgm(const GrayImage& image) {
  if (image.pixels.size() != image.width * image.height) {
    throw ShapeError("pgm: pixel count does not match dimensions");
  }
  return encode_netpbm("P5", image.width, image.height, image.pixels);
}

GrayImage decode_pgm(const std::vector<std::uint8_t>& bytes) {
  const auto h = parse_header(bytes, "P5");
  const auto n = h.width * h.height;
  if (bytes.size() - h.data_offset != n) {
    throw FormatError("pgm: expected " + std::to_string(n) + " pixel bytes after offset " +
                      std::to_string(h.data_offset) + ", found " +
                      std::to_string(bytes.size() - h.data_offset));
  }
  GrayImage img;
  img.width = h.width;
  img.height = h.height;
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(h.data_offset), bytes.end());
  return img;
}

void write_pgm(const GrayImage& image, const std::filesystem::path& path) {
  write_file(path, encode_pgm(image));
}

GrayImage read_pgm(const std::filesystem::path& path) { return decode_pgm(read_file(path)); }

std::vector<std::uint8_t> encode_ppm(const RgbImage& image) {
  if (image.pixels.size() != 3 * image.width * image.height) {
    throw ShapeError("ppm: pixel count does not match dimensions");
  }
  return encode_netpbm("P6", image.width, image.height, image.pixels);
}

RgbImage decode_ppm(const std::vector<std::uint8_t>& bytes) {
  const auto h = parse_header(bytes, "P6");
  const auto n = 3 * h.width * h.height;
  if (bytes.size() - h.data_offset != n) {
    throw FormatError("ppm: expected " + std::to_string(n) + " pixel bytes after offset " +
                      std::to_string(h.data_offset));
  }
  RgbImage img;
  img.width = h.width;
  img.height = h.height;
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(h.data_offset), bytes.end());
  return img;
}

void write_ppm(const RgbImage& image, const std::filesystem::path& path) {
  write_file(path, encode_ppm(image));
}

RgbImage read_ppm(const std::filesystem::path& path) { return decode_ppm(read_file(path)); }

}  // namespace dalign
