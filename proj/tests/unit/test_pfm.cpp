#include <gtest/gtest.h>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "relight/error.hpp"
#include "relight/image.hpp"
#include "relight/pfm.hpp"
#include "relight/rng.hpp"

using namespace relight;
namespace fs = std::filesystem;

namespace {

Image random_image(int h, int w, int c, std::uint64_t seed) {
  Rng rng(seed);
  Image img({h, w, c});
  for (auto& v : img.storage()) v = static_cast<float>(rng.normal() * 10.0);
  return img;
}

fs::path temp_file(const std::string& name) { return fs::temp_directory_path() / ("relight_test_" + name); }

}  // namespace

TEST(Pfm, RoundTripIsBitIdentical) {
  for (int c : {1, 3}) {
    const Image img = random_image(8, 8, c, 1 + c);
    const auto path = temp_file("roundtrip.pfm");
    write_pfm(path, img);
    EXPECT_EQ(read_pfm(path), img);
    fs::remove(path);
  }
}

TEST(Pfm, ParsesHandBuiltLittleEndianFile) {
  // Rows are stored bottom-up, samples as little-endian float32.
  std::string bytes = "PF\n8 8\n-1.0\n";
  for (int file_row = 0; file_row < 8; ++file_row)
    for (int x = 0; x < 8; ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = static_cast<float>(file_row * 100 + x * 10 + c);
        const auto raw = std::bit_cast<std::uint32_t>(v);
        for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<char>((raw >> (8 * b)) & 0xff));
      }
  const Image img = parse_pfm(bytes);
  ASSERT_EQ(img.shape(), (Shape{8, 8, 3}));
  EXPECT_EQ(img.at(0, 0, 0), 700.0f);  // top row = last row in the file
  EXPECT_EQ(img.at(7, 3, 2), 32.0f);
  EXPECT_EQ(img.at(2, 5, 1), 551.0f);
}

TEST(Pfm, ParsesBigEndianFile) {
  std::string bytes = "Pf\n2 1\n1.0\n";
  for (float v : {1.5f, -2.0f}) {
    const auto raw = std::bit_cast<std::uint32_t>(v);
    for (int b = 3; b >= 0; --b) bytes.push_back(static_cast<char>((raw >> (8 * b)) & 0xff));
  }
  const Image img = parse_pfm(bytes);
  EXPECT_EQ(img.at(0, 0, 0), 1.5f);
  EXPECT_EQ(img.at(0, 1, 0), -2.0f);
}

TEST(Pfm, TruncatedPayloadNamesOffset) {
  std::string bytes = encode_pfm(random_image(4, 4, 3, 9));
  bytes.resize(bytes.size() - 5);
  try {
    parse_pfm(bytes);
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("offset 12"), std::string::npos) << msg;
    EXPECT_NE(msg.find(std::to_string(bytes.size())), std::string::npos) << msg;
  }
}

TEST(Pfm, RejectsMalformedHeaders) {
  EXPECT_THROW(parse_pfm("P6\n1 1\n-1.0\n"), IoError);
  EXPECT_THROW(parse_pfm("PF\n0 1\n-1.0\n"), IoError);
  EXPECT_THROW(parse_pfm("PF\n1 x\n-1.0\n"), IoError);
  EXPECT_THROW(parse_pfm("PF\n1 1\n0\n"), IoError);
  EXPECT_THROW(parse_pfm("PF\n1"), IoError);
  EXPECT_THROW(read_pfm(temp_file("does_not_exist.pfm")), IoError);
}

TEST(Pfm, RefusesNonFiniteOnWrite) {
  Image img({2, 2, 1});
  img[3] = std::numeric_limits<float>::infinity();
  EXPECT_THROW(encode_pfm(img), NumericError);
  EXPECT_THROW(encode_pfm(Image({2, 2, 2})), InvalidArgument);
}

TEST(ImageOps, ResizeAreaAveragesBlocks) {
  Image img({4, 4, 1});
  for (int i = 0; i < 16; ++i) img[i] = static_cast<float>(i);
  const Image out = resize_area(img, 2, 2);
  EXPECT_FLOAT_EQ(out.at(0, 0, 0), (0 + 1 + 4 + 5) / 4.0f);
  EXPECT_FLOAT_EQ(out.at(1, 1, 0), (10 + 11 + 14 + 15) / 4.0f);
  EXPECT_EQ(resize_area(img, 4, 4), img);
}

TEST(ImageOps, ResizeAreaPreservesMeanAndConstants) {
  const Image img = random_image(12, 12, 3, 3);
  const Image out = resize_area(img, 5, 5);
  double a = 0, b = 0;
  for (float v : img.values()) a += v;
  for (float v : out.values()) b += v;
  EXPECT_NEAR(a / img.size(), b / out.size(), 1e-4);
  const Image flat({7, 9, 1}, 0.25f);
  const Image resized = resize_area(flat, 16, 3);
  for (float v : resized.values()) EXPECT_FLOAT_EQ(v, 0.25f);
}

TEST(ImageOps, CropAndMask) {
  const Image img = random_image(6, 5, 3, 4);
  const Image c = crop(img, {1, 2, 3, 2});
  EXPECT_EQ(c.shape(), (Shape{2, 3, 3}));
  EXPECT_EQ(c.at(1, 2, 1), img.at(3, 3, 1));
  EXPECT_THROW(crop(img, {3, 0, 3, 2}), InvalidArgument);
  Image mask({6, 5, 1});
  mask.at(2, 2, 0) = 0.5f;
  const Image masked = apply_mask(img, mask);
  EXPECT_EQ(masked.at(2, 2, 2), 0.5f * img.at(2, 2, 2));
  EXPECT_EQ(masked.at(0, 0, 0), 0.0f);
}
