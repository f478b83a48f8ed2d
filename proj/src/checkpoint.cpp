#include "relight/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <zlib.h>

#include "json.hpp"

#include "relight/error.hpp"

namespace relight {

using nlohmann::json;

namespace {

std::uint32_t to_little_endian(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
  return v;
}

void append(std::string& blob, const Tensor<float>& t) {
  const std::size_t start = blob.size();
  blob.resize(start + static_cast<std::size_t>(t.size()) * 4);
  for (std::int64_t i = 0; i < t.size(); ++i) {
    const std::uint32_t raw = to_little_endian(std::bit_cast<std::uint32_t>(t[i]));
    std::memcpy(&blob[start + static_cast<std::size_t>(i) * 4], &raw, 4);
  }
}

Tensor<float> extract(const std::string& blob, std::size_t offset, const Shape& shape) {
  Tensor<float> t(shape);
  for (std::int64_t i = 0; i < t.size(); ++i) {
    std::uint32_t raw;
    std::memcpy(&raw, &blob[offset + static_cast<std::size_t>(i) * 4], 4);
    t[i] = std::bit_cast<float>(to_little_endian(raw));
  }
  return t;
}

std::uint32_t checksum(const std::string& blob) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t done = 0;
  while (done < blob.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(blob.size() - done, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(blob.data() + done), chunk);
    done += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& checkpoint) {
  const auto layout = parameter_layout(checkpoint.config);
  if (checkpoint.params.size() != layout.size()) throw InvalidArgument("checkpoint parameters do not match the config");
  std::string blob;
  json tensors = json::array();
  auto add = [&](const std::string& name, const Tensor<float>& t) {
    if (!t.all_finite()) throw NumericError("refusing to save non-finite tensor " + name);
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"offset", blob.size()}});
    append(blob, t);
  };
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (checkpoint.params.name(i) != layout[i].first || checkpoint.params.tensor(i).shape() != layout[i].second) {
      throw InvalidArgument("checkpoint parameter '" + checkpoint.params.name(i) + "' does not match the config");
    }
    add(checkpoint.params.name(i), checkpoint.params.tensor(i));
  }
  json manifest = {{"version", kCheckpointVersion},
                   {"config", json::parse(config_to_json(checkpoint.config))},
                   {"training_state", json::parse(checkpoint.training_state)}};
  if (checkpoint.optimizer) {
    const auto& opt = *checkpoint.optimizer;
    for (std::size_t i = 0; i < opt.first_moment.size(); ++i) add("adam.m/" + opt.first_moment.name(i), opt.first_moment.tensor(i));
    for (std::size_t i = 0; i < opt.second_moment.size(); ++i) add("adam.v/" + opt.second_moment.name(i), opt.second_moment.tensor(i));
    manifest["optimizer"] = {{"step", opt.step},
                             {"learning_rate", opt.options.learning_rate},
                             {"beta1", opt.options.beta1},
                             {"beta2", opt.options.beta2},
                             {"epsilon", opt.options.epsilon}};
  }
  manifest["tensors"] = tensors;
  manifest["blob_bytes"] = blob.size();
  manifest["crc32"] = checksum(blob);
  std::filesystem::create_directories(dir);
  write_file(dir / "params.bin", blob);
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  json manifest;
  try {
    manifest = json::parse(read_file(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw IoError("checkpoint manifest in " + dir.string() + " does not parse: " + e.what());
  }
  const std::string blob = read_file(dir / "params.bin");
  Checkpoint ck;
  try {
    const int version = manifest.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw IoError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                    std::to_string(kCheckpointVersion) + ")");
    }
    if (manifest.at("blob_bytes").get<std::size_t>() != blob.size()) {
      throw IoError("checkpoint blob is " + std::to_string(blob.size()) + " bytes, manifest says " +
                    std::to_string(manifest.at("blob_bytes").get<std::size_t>()));
    }
    if (manifest.at("crc32").get<std::uint32_t>() != checksum(blob)) throw IoError("checkpoint blob checksum mismatch");
    ck.config = config_from_json(manifest.at("config").dump());
    ck.training_state = manifest.value("training_state", json::object()).dump();

    std::map<std::string, Tensor<float>> stored;
    for (const auto& t : manifest.at("tensors")) {
      const auto name = t.at("name").get<std::string>();
      const auto shape = t.at("shape").get<Shape>();
      const auto offset = t.at("offset").get<std::size_t>();
      for (int d : shape)
        if (d < 1) throw IoError("tensor " + name + " has a non-positive extent");
      const auto bytes = static_cast<std::size_t>(shape_size(shape)) * 4;
      if (offset > blob.size() || bytes > blob.size() - offset) throw IoError("tensor " + name + " extends past the blob");
      stored.emplace(name, extract(blob, offset, shape));
    }
    for (const auto& [name, shape] : parameter_layout(ck.config)) {
      const auto it = stored.find(name);
      if (it == stored.end()) throw InvalidArgument("checkpoint lacks parameter " + name + " required by its config");
      if (it->second.shape() != shape) {
        throw InvalidArgument("checkpoint parameter " + name + " has shape " + shape_string(it->second.shape()) +
                              " but its config requires " + shape_string(shape));
      }
      ck.params.add(name, it->second);
    }
    if (manifest.contains("optimizer")) {
      const auto& o = manifest.at("optimizer");
      AdamOptions options{o.at("learning_rate").get<double>(), o.at("beta1").get<double>(), o.at("beta2").get<double>(),
                          o.at("epsilon").get<double>()};
      AdamState<float> state = AdamState<float>::zeros_like(ck.params, options);
      state.step = o.at("step").get<std::int64_t>();
      for (std::size_t i = 0; i < ck.params.size(); ++i) {
        const auto& name = ck.params.name(i);
        for (auto [prefix, target] : {std::pair{"adam.m/", &state.first_moment}, std::pair{"adam.v/", &state.second_moment}}) {
          const auto it = stored.find(prefix + name);
          if (it == stored.end() || it->second.shape() != ck.params.tensor(i).shape()) {
            throw InvalidArgument(std::string("checkpoint optimizer state for ") + name + " is missing or misshapen");
          }
          target->get(name) = it->second;
        }
      }
      ck.optimizer = std::move(state);
    }
  } catch (const json::exception& e) {
    throw IoError("checkpoint manifest in " + dir.string() + " is malformed: " + e.what());
  }
  return ck;
}

}  // namespace relight
