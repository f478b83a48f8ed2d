#include "relight/pfm.hpp"

#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "relight/error.hpp"

namespace relight {
namespace {

std::uint32_t byteswap32(std::uint32_t v) {
  return (v >> 24) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24);
}

class HeaderReader {
 public:
  explicit HeaderReader(std::string_view bytes) : bytes_(bytes) {}

  std::string token() {
    while (pos_ < bytes_.size() && std::isspace(static_cast<unsigned char>(bytes_[pos_]))) ++pos_;
    const std::size_t start = pos_;
    while (pos_ < bytes_.size() && !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) ++pos_;
    if (start == pos_) throw IoError("PFM header truncated at byte " + std::to_string(start));
    return std::string(bytes_.substr(start, pos_ - start));
  }

  // Exactly one whitespace byte separates the header from the samples.
  std::size_t payload_offset() {
    if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
      throw IoError("PFM header not terminated at byte " + std::to_string(pos_));
    }
    return pos_ + 1;
  }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

int parse_dimension(const std::string& token, const char* what) {
  try {
    std::size_t used = 0;
    const long v = std::stol(token, &used);
    if (used != token.size() || v <= 0 || v > (1 << 24)) throw std::out_of_range(what);
    return static_cast<int>(v);
  } catch (const std::exception&) {
    throw IoError(std::string("PFM header: invalid ") + what + " '" + token + "'");
  }
}

}  // namespace

Image parse_pfm(std::string_view bytes) {
  HeaderReader header(bytes);
  const std::string magic = header.token();
  int channels = 0;
  if (magic == "PF") {
    channels = 3;
  } else if (magic == "Pf") {
    channels = 1;
  } else {
    throw IoError("PFM header: bad magic '" + magic + "'");
  }
  const int width = parse_dimension(header.token(), "width");
  const int height = parse_dimension(header.token(), "height");
  const std::string scale_token = header.token();
  double scale = 0.0;
  try {
    scale = std::stod(scale_token);
  } catch (const std::exception&) {
    throw IoError("PFM header: invalid scale '" + scale_token + "'");
  }
  if (scale == 0.0 || !std::isfinite(scale)) throw IoError("PFM header: invalid scale '" + scale_token + "'");
  const bool little_endian = scale < 0.0;
  const std::size_t offset = header.payload_offset();
  const std::size_t expected = static_cast<std::size_t>(width) * height * channels * 4;
  if (bytes.size() < offset + expected) {
    throw IoError("PFM payload truncated: expected " + std::to_string(expected) + " bytes from offset " +
                  std::to_string(offset) + ", file ends at byte " + std::to_string(bytes.size()));
  }
  const bool swap = little_endian != (std::endian::native == std::endian::little);
  Image image({height, width, channels});
  const char* src = bytes.data() + offset;
  for (int file_row = 0; file_row < height; ++file_row) {
    const int y = height - 1 - file_row;
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < channels; ++c) {
        std::uint32_t raw;
        std::memcpy(&raw, src, 4);
        src += 4;
        if (swap) raw = byteswap32(raw);
        image.at(y, x, c) = std::bit_cast<float>(raw);
      }
  }
  return image;
}

Image read_pfm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return parse_pfm(bytes);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

std::string encode_pfm(const Image& image) {
  if (image.rank() != 3 || (image.dim(2) != 1 && image.dim(2) != 3)) {
    throw InvalidArgument("PFM images must be H x W x 1 or H x W x 3, got " + shape_string(image.shape()));
  }
  if (!image.all_finite()) throw NumericError("refusing to write non-finite samples to PFM");
  const int height = image.dim(0), width = image.dim(1), channels = image.dim(2);
  std::ostringstream header;
  header << (channels == 3 ? "PF" : "Pf") << '\n' << width << ' ' << height << '\n' << "-1.0" << '\n';
  std::string out = header.str();
  const std::size_t offset = out.size();
  out.resize(offset + static_cast<std::size_t>(width) * height * channels * 4);
  char* dst = out.data() + offset;
  for (int file_row = 0; file_row < height; ++file_row) {
    const int y = height - 1 - file_row;
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < channels; ++c) {
        std::uint32_t raw = std::bit_cast<std::uint32_t>(image.at(y, x, c));
        if constexpr (std::endian::native != std::endian::little) raw = byteswap32(raw);
        std::memcpy(dst, &raw, 4);
        dst += 4;
      }
  }
  return out;
}

void write_pfm(const std::filesystem::path& path, const Image& image) {
  const std::string bytes = encode_pfm(image);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace relight
