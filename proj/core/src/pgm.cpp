#include "vreid/pgm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "vreid/error.hpp"
#include "vreid/fmap_io.hpp"

namespace vreid {

void write_pgm(const std::filesystem::path& path, const GrayImage& image) {
  require(image.pixels.size() == image.height * image.width, ErrorCode::ShapeMismatch, "pgm pixel count");
  const std::string header =
      "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  bytes.insert(bytes.end(), image.pixels.begin(), image.pixels.end());
  write_file_bytes(path, bytes);
}

GrayImage read_pgm(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  std::size_t pos = 0;
  auto next_token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    std::string tok;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) tok.push_back(static_cast<char>(bytes[pos++]));
    return tok;
  };
  require(next_token() == "P5", ErrorCode::BadMagic, path.string() + " is not a binary PGM");
  GrayImage img;
  try {
    img.width = std::stoul(next_token());
    img.height = std::stoul(next_token());
    require(std::stoul(next_token()) == 255, ErrorCode::BadMagic, "pgm maxval must be 255");
  } catch (const std::logic_error&) {
    fail(ErrorCode::BadMagic, path.string() + ": malformed PGM header");
  }
  ++pos;  // single whitespace after maxval
  require(bytes.size() >= pos && bytes.size() - pos == img.width * img.height, ErrorCode::TruncatedPayload,
          path.string() + ": pixel payload size");
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  return img;
}

std::uint8_t probability_to_byte(double p) noexcept {
  const double clamped = std::clamp(p, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::min(255.0, std::floor(255.0 * clamped + 0.5)));
}

BinaryMask mask_from_image(const GrayImage& image) {
  BinaryMask m(image.height, image.width);
  for (std::size_t k = 0; k < image.pixels.size(); ++k) m.data[k] = image.pixels[k] ? 1 : 0;
  return m;
}

GrayImage image_from_mask(const BinaryMask& mask) {
  GrayImage img{mask.height, mask.width, std::vector<std::uint8_t>(mask.data.size())};
  for (std::size_t k = 0; k < mask.data.size(); ++k) img.pixels[k] = mask.data[k] ? 255 : 0;
  return img;
}

}  // namespace vreid
