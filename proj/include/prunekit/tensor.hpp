#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "prunekit/error.hpp"

namespace prunekit {

inline std::size_t shape_elements(const std::vector<std::size_t>& shape) {
  std::size_t total = 1;
  for (std::size_t dim : shape) total *= dim;
  return total;
}

// Dense f32 tensor, row-major, 1 to 4 dimensions.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<float> data;

  Tensor() = default;
  Tensor(std::vector<std::size_t> shape_in, std::vector<float> data_in)
      : shape(std::move(shape_in)), data(std::move(data_in)) {
    validate();
  }

  std::size_t elements() const { return shape_elements(shape); }

  void validate() const {
    if (shape.empty() || shape.size() > 4)
      raise(errc::invalid_argument,
            "tensor rank must be between 1 and 4, got " + std::to_string(shape.size()));
    for (std::size_t dim : shape)
      if (dim == 0) raise(errc::invalid_argument, "tensor dimensions must be positive");
    if (data.size() != elements())
      raise(errc::invalid_argument, "tensor data length " + std::to_string(data.size()) +
                                        " does not match shape product " +
                                        std::to_string(elements()));
  }
};

inline bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) return false;
  for (std::size_t i = 0; i < a.data.size(); ++i)
    if (std::bit_cast<std::uint32_t>(a.data[i]) != std::bit_cast<std::uint32_t>(b.data[i]))
      return false;
  return true;
}

// One conv layer's weights viewed as n flattened filters. Flattening is
// channel-major, then kernel row, then kernel column, i.e. the row-major
// order of each [c, k, k] slice of the [n, c, k, k] weight tensor.
struct FilterBank {
  std::string layer_name;
  std::size_t n = 0;  // filter count
  std::size_t k = 0;  // spatial kernel size (square)
  std::size_t c = 0;  // input channel depth
  std::vector<std::vector<float>> filters;

  std::size_t filter_size() const { return c * k * k; }
};

inline FilterBank as_filter_bank(const Tensor& t, std::string layer_name) {
  if (t.shape.size() != 4)
    raise(errc::invalid_argument, "non-4-D tensor: layer \"" + layer_name + "\" has rank " +
                                      std::to_string(t.shape.size()));
  if (t.shape[2] != t.shape[3])
    raise(errc::invalid_argument, "non-square kernel: layer \"" + layer_name + "\" has shape [" +
                                      std::to_string(t.shape[2]) + ", " +
                                      std::to_string(t.shape[3]) + "]");
  FilterBank bank;
  bank.layer_name = std::move(layer_name);
  bank.n = t.shape[0];
  bank.c = t.shape[1];
  bank.k = t.shape[2];
  const std::size_t stride = bank.filter_size();
  bank.filters.reserve(bank.n);
  for (std::size_t j = 0; j < bank.n; ++j)
    bank.filters.emplace_back(t.data.begin() + static_cast<std::ptrdiff_t>(j * stride),
                              t.data.begin() + static_cast<std::ptrdiff_t>((j + 1) * stride));
  return bank;
}

// Inverse of as_filter_bank; reproduces the original [n, c, k, k] tensor
// bit-exactly.
inline Tensor to_tensor(const FilterBank& bank) {
  std::vector<float> data;
  data.reserve(bank.n * bank.filter_size());
  for (const auto& filter : bank.filters) data.insert(data.end(), filter.begin(), filter.end());
  return Tensor({bank.n, bank.c, bank.k, bank.k}, std::move(data));
}

}  // namespace prunekit
