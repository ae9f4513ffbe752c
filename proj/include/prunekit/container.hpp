#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "prunekit/tensor.hpp"

namespace prunekit {

// Weight container file layout (little-endian throughout):
//
//   bytes 0-3    magic "PKTC"
//   bytes 4-7    format version, u32 = 1
//   bytes 8-15   header length H, u64
//   bytes 16..   UTF-8 JSON header:
//                {"metadata": {..}, "layers": [{"name", "shape", "dtype": "f32",
//                 "offset", "nbytes"}, ..]}   (offsets relative to payload start)
//   remainder    concatenated raw f32 payloads, no padding
//
// Equal containers serialize to byte-identical files.

static_assert(std::endian::native == std::endian::little,
              "the container reader/writer assumes a little-endian host");

inline constexpr std::array<char, 4> kContainerMagic{'P', 'K', 'T', 'C'};
inline constexpr std::uint32_t kContainerVersion = 1;

// Nonempty, printable, no whitespace. '.', '_' and '/' are the usual
// separators in layer names and fall inside the printable range.
inline bool valid_layer_name(std::string_view name) {
  if (name.empty()) return false;
  for (char ch : name) {
    const auto byte = static_cast<unsigned char>(ch);
    if (byte < 0x21 || byte > 0x7E) return false;
  }
  return true;
}

class WeightContainer {
 public:
  std::map<std::string, std::string> metadata;

  void add_layer(std::string name, Tensor tensor) {
    if (!valid_layer_name(name))
      raise(errc::invalid_argument, "invalid layer name \"" + name + "\"");
    if (find(name) != nullptr)
      raise(errc::invalid_argument, "duplicate layer name \"" + name + "\"");
    tensor.validate();
    layers_.emplace_back(std::move(name), std::move(tensor));
  }

  const std::vector<std::pair<std::string, Tensor>>& layers() const { return layers_; }

  const Tensor* find(std::string_view name) const {
    for (const auto& [layer_name, tensor] : layers_)
      if (layer_name == name) return &tensor;
    return nullptr;
  }

  const Tensor& at(const std::string& name) const {
    const Tensor* tensor = find(name);
    if (tensor == nullptr) raise(errc::unknown_layer, "unknown layer \"" + name + "\"");
    return *tensor;
  }

  bool has(std::string_view name) const { return find(name) != nullptr; }

  std::size_t size() const { return layers_.size(); }

 private:
  std::vector<std::pair<std::string, Tensor>> layers_;
};

inline bool bit_equal(const WeightContainer& a, const WeightContainer& b) {
  if (a.metadata != b.metadata || a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.layers()[i].first != b.layers()[i].first) return false;
    if (!bit_equal(a.layers()[i].second, b.layers()[i].second)) return false;
  }
  return true;
}

namespace detail {

template <typename T>
void append_le(std::string& out, T value) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  out.append(bytes, sizeof(T));
}

inline std::string header_json(const WeightContainer& container) {
  nlohmann::json header;
  header["metadata"] = container.metadata;
  auto layer_list = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, tensor] : container.layers()) {
    const std::uint64_t nbytes = tensor.data.size() * sizeof(float);
    layer_list.push_back({{"name", name},
                          {"shape", tensor.shape},
                          {"dtype", "f32"},
                          {"offset", offset},
                          {"nbytes", nbytes}});
    offset += nbytes;
  }
  header["layers"] = std::move(layer_list);
  return header.dump();
}

}  // namespace detail

inline void write_container(const WeightContainer& container, const std::filesystem::path& path) {
  for (const auto& [name, tensor] : container.layers())
    for (std::size_t i = 0; i < tensor.data.size(); ++i)
      if (!std::isfinite(tensor.data[i]))
        raise(errc::non_finite_value, "layer \"" + name + "\" holds a non-finite value at index " +
                                          std::to_string(i));

  const std::string header = detail::header_json(container);
  std::string bytes;
  bytes.append(kContainerMagic.data(), kContainerMagic.size());
  detail::append_le(bytes, kContainerVersion);
  detail::append_le(bytes, static_cast<std::uint64_t>(header.size()));
  bytes.append(header);
  for (const auto& [name, tensor] : container.layers())
    bytes.append(reinterpret_cast<const char*>(tensor.data.data()),
                 tensor.data.size() * sizeof(float));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(errc::io_error, "cannot open \"" + path.string() + "\" for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) raise(errc::io_error, "write failed for \"" + path.string() + "\"");
}

inline WeightContainer read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) raise(errc::io_error, "cannot open \"" + path.string() + "\" for reading");
  const auto file_size = static_cast<std::uint64_t>(in.tellg());
  in.seekg(0);

  if (file_size < 16)
    raise(errc::length_mismatch,
          "\"" + path.string() + "\" is too small to hold the fixed 16-byte prelude");

  std::string prelude(16, '\0');
  in.read(prelude.data(), 16);
  if (std::memcmp(prelude.data(), kContainerMagic.data(), 4) != 0)
    raise(errc::bad_magic, "bad magic in \"" + path.string() + "\": expected PKTC");
  std::uint32_t version = 0;
  std::memcpy(&version, prelude.data() + 4, 4);
  if (version != kContainerVersion)
    raise(errc::unsupported_version, "unsupported container version " + std::to_string(version) +
                                         " in \"" + path.string() + "\"");
  std::uint64_t header_size = 0;
  std::memcpy(&header_size, prelude.data() + 8, 8);
  if (16 + header_size > file_size)
    raise(errc::length_mismatch, "header of " + std::to_string(header_size) +
                                     " bytes overruns the file in \"" + path.string() + "\"");

  std::string header_text(header_size, '\0');
  in.read(header_text.data(), static_cast<std::streamsize>(header_size));
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_text);
  } catch (const nlohmann::json::exception& e) {
    raise(errc::invalid_header, "unparseable header in \"" + path.string() + "\": " + e.what());
  }
  if (!header.is_object() || !header.contains("metadata") || !header.contains("layers") ||
      !header["metadata"].is_object() || !header["layers"].is_array())
    raise(errc::invalid_header, "header of \"" + path.string() +
                                    "\" must be {\"metadata\": {..}, \"layers\": [..]}");

  WeightContainer container;
  for (const auto& [key, value] : header["metadata"].items()) {
    if (!value.is_string())
      raise(errc::invalid_header, "metadata value for \"" + key + "\" is not a string");
    container.metadata.emplace(key, value.get<std::string>());
  }

  const std::uint64_t payload_size = file_size - 16 - header_size;
  std::string payload(payload_size, '\0');
  in.read(payload.data(), static_cast<std::streamsize>(payload_size));
  if (!in) raise(errc::io_error, "read failed for \"" + path.string() + "\"");

  std::uint64_t expected_offset = 0;
  for (const auto& entry : header["layers"]) {
    if (!entry.is_object() || !entry.contains("name") || !entry.contains("shape") ||
        !entry.contains("dtype") || !entry.contains("offset") || !entry.contains("nbytes"))
      raise(errc::invalid_header, "layer entry missing a required field in \"" + path.string() + "\"");
    const auto name = entry["name"].get<std::string>();
    if (!valid_layer_name(name))
      raise(errc::invalid_header, "invalid layer name \"" + name + "\"");
    if (entry["dtype"].get<std::string>() != "f32")
      raise(errc::invalid_header, "layer \"" + name + "\" has unsupported dtype \"" +
                                      entry["dtype"].get<std::string>() + "\"");
    auto shape = entry["shape"].get<std::vector<std::size_t>>();
    if (shape.empty() || shape.size() > 4)
      raise(errc::invalid_header, "layer \"" + name + "\" has unsupported rank " +
                                      std::to_string(shape.size()));
    for (std::size_t dim : shape)
      if (dim == 0) raise(errc::invalid_header, "layer \"" + name + "\" has a zero dimension");

    const auto offset = entry["offset"].get<std::uint64_t>();
    const auto nbytes = entry["nbytes"].get<std::uint64_t>();
    const std::uint64_t element_count = shape_elements(shape);
    if (nbytes != element_count * sizeof(float))
      raise(errc::length_mismatch, "layer \"" + name + "\" declares " + std::to_string(nbytes) +
                                       " bytes for " + std::to_string(element_count) + " elements");
    if (offset != expected_offset)
      raise(errc::invalid_header, "layer \"" + name + "\" is not contiguous with its predecessor");
    if (offset + nbytes > payload_size)
      raise(errc::truncated_payload, "truncated payload: layer \"" + name + "\" needs bytes [" +
                                         std::to_string(offset) + ", " +
                                         std::to_string(offset + nbytes) + ") but only " +
                                         std::to_string(payload_size) + " are present");
    expected_offset = offset + nbytes;

    std::vector<float> data(element_count);
    std::memcpy(data.data(), payload.data() + offset, nbytes);
    for (std::size_t i = 0; i < data.size(); ++i)
      if (!std::isfinite(data[i]))
        raise(errc::non_finite_value, "layer \"" + name + "\" holds a non-finite value at index " +
                                          std::to_string(i));
    container.add_layer(name, Tensor(std::move(shape), std::move(data)));
  }
  if (expected_offset != payload_size)
    raise(errc::length_mismatch, "header declares " + std::to_string(expected_offset) +
                                     " payload bytes but \"" + path.string() + "\" carries " +
                                     std::to_string(payload_size));
  return container;
}

}  // namespace prunekit
