#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "dancemeld/autograd/ops.hpp"

namespace dancemeld::hvqvae {

using CodeIndices = std::vector<std::int32_t>;

template <typename T>
struct Quantized {
  CodeIndices indices;
  Tensor<T> vectors;  // rows are exact copies of codebook entries
};

// Nearest codebook entry per row under squared L2 distance, accumulated in
// double. Ties go to the lowest index.
template <typename T>
Quantized<T> quantize(const Tensor<T>& features, const Tensor<T>& entries) {
  DM_THROW_IF(features.cols() != entries.cols(), DimMismatch,
              "feature width " + std::to_string(features.cols()) + " != code width " + std::to_string(entries.cols()));
  DM_THROW_IF(entries.rows() < 2, InvariantViolation, "codebook needs at least two entries");
  const std::size_t D = entries.cols();
  Quantized<T> out;
  out.indices.resize(features.rows());
  out.vectors = Tensor<T>(features.rows(), D);
  for (std::size_t i = 0; i < features.rows(); ++i) {
    const T* h = features.data() + i * D;
    double best = std::numeric_limits<double>::infinity();
    std::int32_t best_k = 0;
    for (std::size_t k = 0; k < entries.rows(); ++k) {
      const T* e = entries.data() + k * D;
      double d = 0.0;
      for (std::size_t c = 0; c < D; ++c) {
        const double diff = double(h[c]) - double(e[c]);
        d += diff * diff;
        if (d >= best) break;
      }
      if (d < best) {
        best = d;
        best_k = std::int32_t(k);
      }
    }
    out.indices[i] = best_k;
    std::copy_n(entries.data() + std::size_t(best_k) * D, D, out.vectors.data() + i * D);
  }
  return out;
}

template <typename T>
Tensor<T> lookup(const Tensor<T>& entries, const CodeIndices& indices) {
  Tensor<T> out(indices.size(), entries.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    DM_THROW_IF(indices[i] < 0 || std::size_t(indices[i]) >= entries.rows(), IndexOutOfRange,
                "code index " + std::to_string(indices[i]) + " outside codebook of " + std::to_string(entries.rows()));
    std::copy_n(entries.data() + std::size_t(indices[i]) * entries.cols(), entries.cols(), out.data() + i * entries.cols());
  }
  return out;
}

// Code usage accumulated over an epoch.
struct CodeUsage {
  std::vector<std::uint64_t> counts;

  explicit CodeUsage(std::size_t codes = 0) : counts(codes, 0) {}

  void add(const CodeIndices& idx) {
    for (auto i : idx) ++counts[std::size_t(i)];
  }

  std::size_t distinct() const {
    std::size_t n = 0;
    for (auto c : counts) n += c > 0;
    return n;
  }

  double perplexity() const {
    double total = 0;
    for (auto c : counts) total += double(c);
    if (total == 0) return 0.0;
    double h = 0;
    for (auto c : counts)
      if (c > 0) {
        const double p = double(c) / total;
        h -= p * std::log(p);
      }
    return std::exp(h);
  }
};

}  // namespace dancemeld::hvqvae
