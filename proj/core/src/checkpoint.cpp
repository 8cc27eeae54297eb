// Copyright 2026 The kdvit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint layout (little-endian):
//
//   char[8]  magic "KDVITCK1"
//   u32      format_version
//   u32      scalar width in bytes (4 or 8)
//   u64      config JSON length, followed by the JSON text
//   u32      tensor count
//   per tensor: u32 name length, name, u32 rows, u32 cols, rows*cols scalars

#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>

#include "kdvit/error.hpp"
#include "kdvit/vit.hpp"

namespace kdvit {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

namespace {

constexpr char kMagic[8] = {'K', 'D', 'V', 'I', 'T', 'C', 'K', '1'};
constexpr std::uint32_t kFormatVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::filesystem::path& path) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  require(static_cast<bool>(in), Errc::kIo, "truncated checkpoint " + path.string());
  return value;
}

std::string read_bytes(std::istream& in, std::size_t n, const std::filesystem::path& path) {
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  require(static_cast<bool>(in), Errc::kIo, "truncated checkpoint " + path.string());
  return s;
}

}  // namespace

std::string config_to_json(const ViTConfig& c) {
  nlohmann::ordered_json j;
  j["image_size"] = c.image_size;
  j["patch_size"] = c.patch_size;
  j["channels"] = c.channels;
  j["hidden_size"] = c.hidden_size;
  j["intermediate_size"] = c.intermediate_size;
  j["num_layers"] = c.num_layers;
  j["num_heads"] = c.num_heads;
  j["num_classes"] = c.num_classes;
  j["seed"] = c.seed;
  return j.dump();
}

ViTConfig config_from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::kSchema, std::string("model config is not valid JSON: ") + e.what());
  }
  ViTConfig c;
  try {
    c.image_size = j.value("image_size", c.image_size);
    c.patch_size = j.value("patch_size", c.patch_size);
    c.channels = j.value("channels", c.channels);
    c.hidden_size = j.value("hidden_size", c.hidden_size);
    c.intermediate_size = j.value("intermediate_size", c.intermediate_size);
    c.num_layers = j.value("num_layers", c.num_layers);
    c.num_heads = j.value("num_heads", c.num_heads);
    c.num_classes = j.value("num_classes", c.num_classes);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::kSchema, std::string("model config has a mistyped field: ") + e.what());
  }
  return c;
}

template <typename Scalar>
void save_checkpoint(const TinyViT<Scalar>& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), Errc::kIo, "cannot open " + path.string() + " for writing");
  out.write(kMagic, sizeof(kMagic));
  write_pod(out, kFormatVersion);
  write_pod(out, static_cast<std::uint32_t>(sizeof(Scalar)));
  const std::string json = config_to_json(model.config());
  write_pod(out, static_cast<std::uint64_t>(json.size()));
  out.write(json.data(), static_cast<std::streamsize>(json.size()));
  const auto tensors = model.params().tensors();
  write_pod(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    write_pod(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    write_pod(out, static_cast<std::uint32_t>(t.value->rows()));
    write_pod(out, static_cast<std::uint32_t>(t.value->cols()));
    out.write(reinterpret_cast<const char*>(t.value->data()),
              static_cast<std::streamsize>(t.value->size() * sizeof(Scalar)));
  }
  require(static_cast<bool>(out), Errc::kIo, "failed writing " + path.string());
}

template <typename Scalar>
TinyViT<Scalar> load_checkpoint(const std::filesystem::path& path, const ViTConfig* expected) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), Errc::kIo, "cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  require(static_cast<bool>(in) && std::memcmp(magic, kMagic, sizeof(kMagic)) == 0, Errc::kIo,
          path.string() + " is not a kdvit checkpoint");
  const auto version = read_pod<std::uint32_t>(in, path);
  require(version == kFormatVersion, Errc::kIo,
          "unsupported checkpoint format_version " + std::to_string(version));
  const auto width = read_pod<std::uint32_t>(in, path);
  require(width == 4 || width == 8, Errc::kIo, "bad scalar width in " + path.string());
  const auto json_len = read_pod<std::uint64_t>(in, path);
  const ViTConfig config = config_from_json(read_bytes(in, json_len, path));
  if (expected != nullptr) {
    require(config == *expected, Errc::kConfig,
            "checkpoint config " + config_to_json(config) + " does not match expected " +
                config_to_json(*expected));
  }

  TinyViT<Scalar> model(config);
  auto tensors = model.params().tensors();
  const auto count = read_pod<std::uint32_t>(in, path);
  require(count == tensors.size(), Errc::kConfig, "checkpoint tensor count does not match config");
  for (auto& t : tensors) {
    const auto name_len = read_pod<std::uint32_t>(in, path);
    const std::string name = read_bytes(in, name_len, path);
    require(name == t.name, Errc::kConfig, "expected tensor " + t.name + ", found " + name);
    const auto rows = read_pod<std::uint32_t>(in, path);
    const auto cols = read_pod<std::uint32_t>(in, path);
    require(rows == t.value->rows() && cols == t.value->cols(), Errc::kConfig,
            "tensor " + name + " has the wrong shape");
    const std::size_t n = static_cast<std::size_t>(rows) * cols;
    if (width == sizeof(Scalar)) {
      in.read(reinterpret_cast<char*>(t.value->data()), static_cast<std::streamsize>(n * width));
    } else if (width == 4) {
      std::vector<float> buf(n);
      in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * width));
      for (std::size_t i = 0; i < n; ++i) t.value->data()[i] = static_cast<Scalar>(buf[i]);
    } else {
      std::vector<double> buf(n);
      in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * width));
      for (std::size_t i = 0; i < n; ++i) t.value->data()[i] = static_cast<Scalar>(buf[i]);
    }
    require(static_cast<bool>(in), Errc::kIo, "truncated checkpoint " + path.string());
  }
  return model;
}

template void save_checkpoint(const TinyViT<float>&, const std::filesystem::path&);
template void save_checkpoint(const TinyViT<double>&, const std::filesystem::path&);
template TinyViT<float> load_checkpoint(const std::filesystem::path&, const ViTConfig*);
template TinyViT<double> load_checkpoint(const std::filesystem::path&, const ViTConfig*);

}  // namespace kdvit
