#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nmsparse/mask_core.hpp"

namespace nmsparse {

// Runtime 2:4 layout: the two kept values of each 4-wide block plus their
// two 2-bit column indices, packed four bits per block (low nibble = even
// block). Metadata is exactly 1 bit per parameter.
template <typename T>
struct Sparse24 {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<T> values;            // rows * cols/2, block order
  std::vector<std::uint8_t> meta;   // ceil(blocks / 2) bytes

  std::size_t num_blocks() const { return static_cast<std::size_t>(rows) * cols / 4; }
  std::size_t dense_bytes() const { return static_cast<std::size_t>(rows) * cols * sizeof(T); }
  std::size_t sparse_bytes() const { return values.size() * sizeof(T) + meta.size(); }
};

template <typename T>
Sparse24<T> sparse24_compress(const T* dense, std::uint32_t rows, std::uint32_t cols,
                              const LayerMask& mask);

template <typename T>
std::vector<T> sparse24_decompress(const Sparse24<T>& s);

// out[rows, xcols] = S * x, with x[cols, xcols] dense row-major. Rows are
// processed independently (deterministic for any thread count); the f32
// path accumulates in f64.
template <typename T>
void sparse24_spmm(const Sparse24<T>& s, const T* x, std::size_t xcols, T* out);

// Dense baseline with the same row-parallel axpy discipline as the sparse
// kernel, used by the benchmark so timings isolate sparsity.
template <typename T>
void dense_matmul_baseline(const T* w, std::uint32_t rows, std::uint32_t cols, const T* x,
                           std::size_t xcols, T* out);

namespace serial {
template <typename T>
void sparse24_spmm(const Sparse24<T>& s, const T* x, std::size_t xcols, T* out);
}

// File format: "NMS2" | version u16 | rows u32 | cols u32 | dtype u8
// (0 = f32, 1 = f64) | values | meta. Little-endian.
template <typename T>
std::vector<std::uint8_t> sparse24_serialize(const Sparse24<T>& s);
template <typename T>
Sparse24<T> sparse24_deserialize(const std::vector<std::uint8_t>& bytes);

struct BenchReport {
  struct Entry {
    std::size_t size = 0;
    double dense_ms = 0, sparse_ms = 0, speedup = 0;
    std::size_t dense_bytes = 0, sparse_bytes = 0;
    double footprint_ratio = 0;
  };
  std::vector<Entry> entries;

  std::string to_text() const;
  static BenchReport parse(const std::string& text);
};

// Times square dense-vs-2:4 f32 matmuls (median of `repeats` runs each).
BenchReport run_benchmark(const std::vector<std::size_t>& sizes, int repeats, std::uint64_t seed);

}  // namespace nmsparse
