#include "eapnet/serialize.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "eapnet/config_io.hpp"

namespace eapnet {

namespace {

namespace fs = std::filesystem;

bool host_is_little_endian() {
  const uint16_t probe = 1;
  uint8_t first;
  std::memcpy(&first, &probe, 1);
  return first == 1;
}

float byteswap_float(float f) {
  uint32_t u;
  std::memcpy(&u, &f, 4);
  u = ((u & 0x000000ffu) << 24) | ((u & 0x0000ff00u) << 8) | ((u & 0x00ff0000u) >> 8) |
      ((u & 0xff000000u) >> 24);
  std::memcpy(&f, &u, 4);
  return f;
}

}  // namespace

void write_tensor(const std::string& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_tensor: cannot open " + path);
  nlohmann::json header;
  header["shape"] = {t.shape.n, t.shape.c, t.shape.h, t.shape.w};
  header["dtype"] = "f32";
  header["order"] = "nchw";
  out << header.dump() << "\n";
  if (host_is_little_endian()) {
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<int64_t>(t.data.size() * sizeof(float)));
  } else {
    std::vector<float> swapped(t.data);
    for (float& v : swapped) v = byteswap_float(v);
    out.write(reinterpret_cast<const char*>(swapped.data()),
              static_cast<int64_t>(swapped.size() * sizeof(float)));
  }
  if (!out) throw std::runtime_error("write_tensor: write failed for " + path);
}

Tensor read_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_tensor: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("read_tensor: missing header in " + path);
  nlohmann::json header = nlohmann::json::parse(line);
  if (header.at("dtype") != "f32" || header.at("order") != "nchw") {
    throw std::runtime_error("read_tensor: unsupported dtype/order in " + path);
  }
  const auto dims = header.at("shape");
  if (!dims.is_array() || dims.size() != 4) {
    throw std::runtime_error("read_tensor: bad shape in " + path);
  }
  Tensor t(Shape4{dims[0].get<int64_t>(), dims[1].get<int64_t>(), dims[2].get<int64_t>(),
                  dims[3].get<int64_t>()});
  in.read(reinterpret_cast<char*>(t.data.data()),
          static_cast<int64_t>(t.data.size() * sizeof(float)));
  if (!in) throw std::runtime_error("read_tensor: truncated payload in " + path);
  if (!host_is_little_endian()) {
    for (float& v : t.data) v = byteswap_float(v);
  }
  return t;
}

void save_checkpoint(const std::string& dir, const Checkpoint& checkpoint) {
  fs::create_directories(fs::path(dir) / "params");
  if (checkpoint.has_ema) fs::create_directories(fs::path(dir) / "ema");

  nlohmann::json manifest;
  manifest["version"] = 1;
  manifest["config"] = config_to_json(checkpoint.config);
  manifest["config_hash"] = config_hash(checkpoint.config);
  manifest["has_ema"] = checkpoint.has_ema;
  nlohmann::json shapes = nlohmann::json::object();
  for (const auto& [name, tensor] : checkpoint.params.tensors) {
    shapes[name] = {tensor.shape.n, tensor.shape.c, tensor.shape.h, tensor.shape.w};
    write_tensor((fs::path(dir) / "params" / (name + ".tensor")).string(), tensor);
  }
  manifest["params"] = shapes;
  if (checkpoint.has_ema) {
    for (const auto& [name, tensor] : checkpoint.ema.tensors) {
      write_tensor((fs::path(dir) / "ema" / (name + ".tensor")).string(), tensor);
    }
  }
  std::ofstream out(fs::path(dir) / "manifest.json");
  out << manifest.dump(2) << "\n";
  if (!out) throw std::runtime_error("save_checkpoint: cannot write manifest under " + dir);
}

Checkpoint load_checkpoint(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "manifest.json");
  if (!in) throw std::runtime_error("load_checkpoint: missing manifest.json under " + dir);
  nlohmann::json manifest = nlohmann::json::parse(in);

  Checkpoint ck;
  ck.config = config_from_json(manifest.at("config"));
  ck.has_ema = manifest.value("has_ema", false);
  const uint64_t expect_hash = manifest.at("config_hash");
  if (config_hash(ck.config) != expect_hash) {
    throw std::runtime_error("load_checkpoint: manifest config hash mismatch under " + dir);
  }
  for (const auto& [name, dims] : manifest.at("params").items()) {
    Tensor t = read_tensor((fs::path(dir) / "params" / (name + ".tensor")).string());
    const Shape4 want{dims[0].get<int64_t>(), dims[1].get<int64_t>(), dims[2].get<int64_t>(),
                      dims[3].get<int64_t>()};
    if (!(t.shape == want)) {
      throw std::runtime_error("load_checkpoint: shape mismatch for " + name + ": file " +
                               t.shape.str() + " vs manifest " + want.str());
    }
    ck.params.tensors.emplace(name, std::move(t));
    if (ck.has_ema) {
      ck.ema.tensors.emplace(
          name, read_tensor((fs::path(dir) / "ema" / (name + ".tensor")).string()));
    }
  }
  return ck;
}

}  // namespace eapnet
