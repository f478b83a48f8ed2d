#include <gtest/gtest.h>
#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"

#include "relight/checkpoint.hpp"
#include "relight/cli.hpp"
#include "relight/datasynth.hpp"
#include "relight/pfm.hpp"
#include "relight/png.hpp"
#include "relight/rng.hpp"

namespace fs = std::filesystem;
using namespace relight;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "relight");
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("relight_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

Image random_image(int h, int w, int c, std::uint64_t seed) {
  Rng rng(seed);
  Image im({h, w, c});
  for (auto& v : im.storage()) v = static_cast<float>(rng.uniform(0.0, 1.0));
  return im;
}

// Untrained toy network on disk; enough for the inference plumbing.
fs::path toy_checkpoint(const fs::path& dir) {
  Checkpoint ck;
  ck.config = PRNetConfig::toy();
  ck.params = init_params<float>(ck.config, 11);
  save_checkpoint(dir / "ckpt", ck);
  return dir / "ckpt";
}

struct Png {
  int width = 0, height = 0, color_type = -1, bit_depth = 0;
  std::vector<std::uint8_t> bytes;
};

Png read_png(const fs::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  Png out;
  FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) return out;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(f);
    return out;
  }
  png_init_io(png, f);
  png_read_png(png, info, PNG_TRANSFORM_IDENTITY, nullptr);
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.color_type = png_get_color_type(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  const auto rows = png_get_rows(png, info);
  const auto stride = png_get_rowbytes(png, info);
  for (int y = 0; y < out.height; ++y) out.bytes.insert(out.bytes.end(), rows[y], rows[y] + stride);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(f);
  return out;
}

}  // namespace

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(cli({}).code, kExitUsage);
  EXPECT_EQ(cli({"no-such-command"}).code, kExitUsage);
  EXPECT_EQ(cli({"gen-stage"}).code, kExitUsage);  // --out is required
  EXPECT_EQ(cli({"gen-stage", "--out", "x.json", "--count", "many"}).code, kExitUsage);
  const auto bad_scope = cli({"gradcheck", "--scope", "everything"});
  EXPECT_EQ(bad_scope.code, kExitUsage);
  EXPECT_FALSE(bad_scope.err.empty());
}

TEST(Cli, HelpExitsZero) {
  const auto r = cli({"--help"});
  EXPECT_EQ(r.code, kExitOk);
  EXPECT_NE(r.out.find("retarget"), std::string::npos);
}

TEST(Cli, MissingFilesExitTwo) {
  const fs::path dir = scratch("io");
  const auto r = cli({"project-env", "--stage", (dir / "absent.json").string(), "--env", (dir / "absent.pfm").string(),
                      "--out", (dir / "w.json").string()});
  EXPECT_EQ(r.code, kExitIo);
  EXPECT_NE(r.err.find("absent"), std::string::npos);
  EXPECT_EQ(cli({"eval", "--data", (dir / "none.json").string(), "--identity"}).code, kExitIo);
}

TEST(Cli, NonFiniteInputExitsThree) {
  const fs::path dir = scratch("numeric");
  const fs::path ckpt = toy_checkpoint(dir);
  // Hand-built 1x1 three-channel little-endian map holding +inf.
  std::string bytes = "PF\n1 1\n-1.0\n";
  const float inf = std::numeric_limits<float>::infinity();
  for (int k = 0; k < 3; ++k) bytes.append(reinterpret_cast<const char*>(&inf), sizeof inf);
  std::ofstream(dir / "inf.pfm", std::ios::binary) << bytes;
  write_pfm(dir / "env.pfm", Image({8, 16, 3}, 1.0f));
  const auto r = cli({"relight", "--input", (dir / "inf.pfm").string(), "--light", (dir / "env.pfm").string(),
                      "--ckpt", ckpt.string(), "--out", (dir / "out.pfm").string()});
  EXPECT_EQ(r.code, kExitNumeric);
  EXPECT_FALSE(r.err.empty());
}

TEST(Cli, VerboseEchoesResolvedConfig) {
  const fs::path dir = scratch("echo");
  const auto r = cli({"gen-stage", "--out", (dir / "s.json").string(), "--count", "40", "--seed", "9", "--verbose"});
  ASSERT_EQ(r.code, kExitOk);
  const auto line = r.out.substr(0, r.out.find('\n'));
  const auto j = nlohmann::json::parse(line);
  EXPECT_EQ(j.at("command"), "gen-stage");
  EXPECT_EQ(j.at("options").at("count"), "40");
  EXPECT_EQ(j.at("options").at("seed"), 9);
  EXPECT_TRUE(j.at("options").contains("sigma"));  // defaults are echoed too
}

TEST(Cli, EveryCommandAcceptsSeed) {
  for (const char* cmd : {"gen-stage", "render-olat", "synth-env", "project-env", "synth-pairs", "train", "relight",
                          "retarget", "estimate-light", "eval", "gradcheck"}) {
    const auto r = cli({cmd, "--help"});
    EXPECT_EQ(r.code, kExitOk) << cmd;
    EXPECT_NE(r.out.find("--seed"), std::string::npos) << cmd;
  }
}

TEST(Cli, GenStageIsDeterministic) {
  const fs::path dir = scratch("det");
  ASSERT_EQ(cli({"gen-stage", "--out", (dir / "a.json").string(), "--seed", "4"}).code, kExitOk);
  ASSERT_EQ(cli({"gen-stage", "--out", (dir / "b.json").string(), "--seed", "4"}).code, kExitOk);
  ASSERT_EQ(cli({"gen-stage", "--out", (dir / "c.json").string(), "--seed", "5"}).code, kExitOk);
  EXPECT_EQ(slurp(dir / "a.json"), slurp(dir / "b.json"));
  EXPECT_NE(slurp(dir / "a.json"), slurp(dir / "c.json"));
}

TEST(Cli, RetargetAtZeroMatchesRelightWithEstimatedLight) {
  const fs::path dir = scratch("retarget");
  const fs::path ckpt = toy_checkpoint(dir);
  write_pfm(dir / "in.pfm", random_image(64, 64, 3, 3));
  Image mask({64, 64, 1}, 0.0f);
  for (int y = 8; y < 56; ++y)
    for (int x = 12; x < 52; ++x) mask.at(y, x, 0) = 1.0f;
  write_pfm(dir / "mask.pfm", mask);
  const std::string in = (dir / "in.pfm").string(), m = (dir / "mask.pfm").string(), c = ckpt.string();
  ASSERT_EQ(cli({"estimate-light", "--input", in, "--mask", m, "--ckpt", c, "--out", (dir / "est.pfm").string()}).code,
            kExitOk);
  ASSERT_EQ(cli({"relight", "--input", in, "--mask", m, "--ckpt", c, "--light", (dir / "est.pfm").string(), "--out",
                 (dir / "relit.pfm").string()})
                .code,
            kExitOk);
  ASSERT_EQ(cli({"retarget", "--input", in, "--mask", m, "--ckpt", c, "--theta", "0", "--out",
                 (dir / "self.pfm").string(), "--light-out", (dir / "light.pfm").string()})
                .code,
            kExitOk);
  EXPECT_EQ(slurp(dir / "relit.pfm"), slurp(dir / "self.pfm"));
  EXPECT_EQ(slurp(dir / "est.pfm"), slurp(dir / "light.pfm"));

  // A nonzero rotation changes the rendering; a full turn does not.
  ASSERT_EQ(cli({"retarget", "--input", in, "--mask", m, "--ckpt", c, "--theta", "90", "--out",
                 (dir / "r90.pfm").string()})
                .code,
            kExitOk);
  ASSERT_EQ(cli({"retarget", "--input", in, "--mask", m, "--ckpt", c, "--theta", "360", "--out",
                 (dir / "r360.pfm").string()})
                .code,
            kExitOk);
  EXPECT_NE(slurp(dir / "r90.pfm"), slurp(dir / "self.pfm"));
  EXPECT_EQ(slurp(dir / "r360.pfm"), slurp(dir / "self.pfm"));

  // Outputs are masked.
  const Image out = read_pfm(dir / "self.pfm");
  EXPECT_EQ(out.at(0, 0, 0), 0.0f);
  EXPECT_EQ(out.at(63, 63, 2), 0.0f);
}

TEST(Cli, RelightCompositeKeepsForegroundAndFillsBackground) {
  const fs::path dir = scratch("composite");
  const fs::path ckpt = toy_checkpoint(dir);
  write_pfm(dir / "in.pfm", random_image(64, 64, 3, 5));
  Image mask({64, 64, 1}, 0.0f);
  for (int y = 16; y < 48; ++y)
    for (int x = 16; x < 48; ++x) mask.at(y, x, 0) = 1.0f;
  write_pfm(dir / "mask.pfm", mask);
  write_pfm(dir / "env.pfm", Image({32, 64, 3}, 0.5f));
  ASSERT_EQ(cli({"relight", "--input", (dir / "in.pfm").string(), "--mask", (dir / "mask.pfm").string(), "--ckpt",
                 ckpt.string(), "--light", (dir / "env.pfm").string(), "--out", (dir / "fg.pfm").string(),
                 "--composite", (dir / "comp.pfm").string()})
                .code,
            kExitOk);
  const Image fg = read_pfm(dir / "fg.pfm"), comp = read_pfm(dir / "comp.pfm");
  EXPECT_EQ(comp.at(30, 30, 1), fg.at(30, 30, 1));
  EXPECT_NEAR(comp.at(2, 2, 0), 0.5f, 1e-6f);
}

TEST(Cli, EvalOnGroundTruthIsZero) {
  const fs::path dir = scratch("eval");
  SynthInputs in;
  SplitRule rule;
  in.olats.emplace("subj", render_olat_synthetic(SceneProxy{}, make_stage(64), 64));
  rule.train_olats = {"subj"};
  for (int i = 0; i < 2; ++i) {
    const std::string id = "env" + std::to_string(i);
    in.envs.emplace(id, make_sun_env(32, 64, {0.3 * i, 0.5, 0.8}, 20, 8, 0.3));
    rule.train_envs.insert(id);
  }
  SynthOptions o = SynthOptions::toy();
  o.image_size = 32;
  o.projection_height = 32;
  o.projection_width = 64;
  build_dataset(in, 3, 2, rule, "train", o, dir / "data");
  const auto r = cli({"eval", "--data", (dir / "data" / "manifest.json").string(), "--identity", "--out",
                      (dir / "report.json").string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("RMSE-s"), std::string::npos);
  const auto j = nlohmann::json::parse(slurp(dir / "report.json"));
  EXPECT_EQ(j.at("count"), 3);
  for (const char* branch : {"target", "source"})
    for (const char* metric : {"rmse", "rmse_s", "dssim"}) EXPECT_EQ(j["mean"][branch][metric], 0.0) << branch << metric;
  EXPECT_EQ(j["mean"]["light_rmse_s"], 0.0);
  EXPECT_EQ(cli({"eval", "--data", (dir / "data" / "manifest.json").string()}).code, kExitUsage);
}

TEST(Cli, GradcheckReportsAndFailsOnImpossibleTolerance) {
  const auto ok = cli({"gradcheck", "--scope", "primitives"});
  EXPECT_EQ(ok.code, kExitOk);
  EXPECT_NE(ok.out.find("PASS conv2d"), std::string::npos);
  EXPECT_EQ(ok.out.find("FAIL"), std::string::npos);
  const auto strict = cli({"gradcheck", "--scope", "primitives", "--tolerance", "1e-30"});
  EXPECT_EQ(strict.code, kExitNumeric);
}

TEST(Png, GammaEndpointsAndMidpoint) {
  EXPECT_EQ(gamma_encode(0.0f), 0);
  EXPECT_EQ(gamma_encode(1.0f), 255);
  EXPECT_EQ(gamma_encode(0.5f), static_cast<int>(std::lround(255 * std::pow(0.5, 1 / 2.2))));
  EXPECT_EQ(gamma_encode(0.5f), 186);
  EXPECT_EQ(gamma_encode(-3.0f), 0);
  EXPECT_EQ(gamma_encode(7.0f), 255);
  EXPECT_EQ(gamma_encode(std::numeric_limits<float>::quiet_NaN()), 0);
}

TEST(Png, RgbWithoutAlphaAndGrayRoundTrip) {
  const fs::path dir = scratch("png");
  Image rgb({2, 3, 3}, 0.0f);
  rgb.at(0, 0, 0) = 1.0f;
  rgb.at(1, 2, 1) = 0.5f;
  export_png(dir / "rgb.png", rgb);
  const Png p = read_png(dir / "rgb.png");
  EXPECT_EQ(p.width, 3);
  EXPECT_EQ(p.height, 2);
  EXPECT_EQ(p.bit_depth, 8);
  EXPECT_EQ(p.color_type, PNG_COLOR_TYPE_RGB);
  ASSERT_EQ(p.bytes.size(), 18u);
  EXPECT_EQ(p.bytes[0], 255);
  EXPECT_EQ(p.bytes[1], 0);
  EXPECT_EQ(p.bytes[(1 * 3 + 2) * 3 + 1], 186);

  export_png(dir / "gray.png", Image({4, 4, 1}, 1.0f));
  const Png g = read_png(dir / "gray.png");
  EXPECT_EQ(g.color_type, PNG_COLOR_TYPE_GRAY);
  EXPECT_EQ(g.bytes, std::vector<std::uint8_t>(16, 255));
}

TEST(Cli, SmallPipelineRunsEndToEnd) {
  const fs::path dir = scratch("pipeline");
  const auto p = [&](const char* name) { return (dir / name).string(); };
  ASSERT_EQ(cli({"gen-stage", "--count", "48", "--out", p("stage.json")}).code, kExitOk);
  ASSERT_EQ(cli({"render-olat", "--stage", p("stage.json"), "--resolution", "48", "--out", p("olat")}).code, kExitOk);
  ASSERT_EQ(cli({"synth-env", "--height", "32", "--width", "64", "--seed", "1", "--out", p("sky1.pfm"), "--png",
                 p("sky1.png")})
                .code,
            kExitOk);
  ASSERT_EQ(cli({"synth-env", "--height", "32", "--width", "64", "--seed", "2", "--out", p("sky2.pfm")}).code, kExitOk);
  ASSERT_EQ(cli({"project-env", "--stage", p("stage.json"), "--env", p("sky1.pfm"), "--out", p("w.json"),
                 "--light-out", p("back.pfm")})
                .code,
            kExitOk);
  EXPECT_EQ(read_pfm(dir / "back.pfm").dim(0), 16);
  const std::vector<std::string> synth = {"synth-pairs", "--olat", p("olat"), "--env", p("sky1.pfm"), "--env",
                                          p("sky2.pfm"), "--count", "3", "--image-size", "16", "--light-height", "4",
                                          "--light-width", "8", "--projection-height", "32", "--projection-width",
                                          "64", "--out", p("data")};
  ASSERT_EQ(cli(synth).code, kExitOk);
  const auto train = cli({"train", "--data", p("data/manifest.json"), "--out", p("run"), "--preset", "gradcheck",
                          "--steps", "4", "--batch", "2"});
  ASSERT_EQ(train.code, kExitOk) << train.err;
  EXPECT_TRUE(fs::exists(dir / "run" / "checkpoint" / "manifest.json"));
  EXPECT_TRUE(fs::exists(dir / "run" / "train_log.csv"));
  const auto eval = cli({"eval", "--data", p("data/manifest.json"), "--ckpt", p("run/checkpoint"), "--out",
                         p("report.json")});
  ASSERT_EQ(eval.code, kExitOk) << eval.err;
  EXPECT_EQ(nlohmann::json::parse(slurp(dir / "report.json")).at("count"), 3);

  // Rerunning synthesis with the same seed rewrites identical files.
  const std::string first = slurp(dir / "data" / "manifest.json");
  ASSERT_EQ(cli(synth).code, kExitOk);
  EXPECT_EQ(slurp(dir / "data" / "manifest.json"), first);
}
