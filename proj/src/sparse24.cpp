#include "nmsparse/sparse24.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <sstream>

#include "nmsparse/rng.hpp"
#include "nmsparse/serialize.hpp"

namespace nmsparse {

namespace {

constexpr char kSparseMagic[4] = {'N', 'M', 'S', '2'};
constexpr std::uint16_t kSparseVersion = 1;

template <typename T>
constexpr std::uint8_t dtype_tag() {
  return sizeof(T) == 4 ? 0 : 1;
}

inline void unpack_block(const std::uint8_t* meta, std::size_t block, unsigned& i0, unsigned& i1) {
  const std::uint8_t nibble =
      (block & 1) ? (meta[block >> 1] >> 4) : (meta[block >> 1] & 0x0F);
  i0 = nibble & 0x3;
  i1 = (nibble >> 2) & 0x3;
}

}  // namespace

template <typename T>
Sparse24<T> sparse24_compress(const T* dense, std::uint32_t rows, std::uint32_t cols,
                              const LayerMask& mask) {
  if (cols % 4 != 0) throw ValidationError("sparse24: cols must be divisible by 4");
  if (mask.rows != rows || mask.cols != cols)
    throw ValidationError("sparse24: mask shape does not match matrix");
  const MaskCandidateSet set = enumerate_candidates(2, 4);
  validate_layer_mask(mask, set);
  Sparse24<T> s;
  s.rows = rows;
  s.cols = cols;
  const std::size_t blocks = s.num_blocks();
  s.values.resize(blocks * 2);
  s.meta.assign((blocks + 1) / 2, 0);
  for (std::size_t b = 0; b < blocks; ++b) {
    const auto& bits = set.masks[mask.block_indices[b]];
    unsigned idx[2];
    unsigned k = 0;
    for (unsigned j = 0; j < 4; ++j)
      if (bits[j]) idx[k++] = j;
    s.values[b * 2] = dense[b * 4 + idx[0]];
    s.values[b * 2 + 1] = dense[b * 4 + idx[1]];
    const std::uint8_t nibble = static_cast<std::uint8_t>(idx[0] | (idx[1] << 2));
    if (b & 1)
      s.meta[b >> 1] |= static_cast<std::uint8_t>(nibble << 4);
    else
      s.meta[b >> 1] |= nibble;
  }
  return s;
}

template <typename T>
std::vector<T> sparse24_decompress(const Sparse24<T>& s) {
  const std::size_t blocks = s.num_blocks();
  if (s.values.size() != blocks * 2 || s.meta.size() != (blocks + 1) / 2)
    throw FormatError("sparse24 structure sizes are inconsistent", 0);
  std::vector<T> dense(static_cast<std::size_t>(s.rows) * s.cols, T(0));
  for (std::size_t b = 0; b < blocks; ++b) {
    unsigned i0, i1;
    unpack_block(s.meta.data(), b, i0, i1);
    if (i0 >= i1)
      throw FormatError("sparse24 block " + std::to_string(b) +
                            " has corrupt column indices (" + std::to_string(i0) + "," +
                            std::to_string(i1) + ")",
                        b >> 1);
    dense[b * 4 + i0] = s.values[b * 2];
    dense[b * 4 + i1] = s.values[b * 2 + 1];
  }
  return dense;
}

template <typename T>
void sparse24_spmm(const Sparse24<T>& s, const T* x, std::size_t xcols, T* out) {
  const std::size_t blocks_per_row = s.cols / 4;
  const long rows = static_cast<long>(s.rows);
#pragma omp parallel
  {
    std::vector<double> acc(xcols);
#pragma omp for schedule(static)
    for (long r = 0; r < rows; ++r) {
      std::fill(acc.begin(), acc.end(), 0.0);
      const std::size_t row_block0 = static_cast<std::size_t>(r) * blocks_per_row;
      for (std::size_t j = 0; j < blocks_per_row; ++j) {
        const std::size_t b = row_block0 + j;
        unsigned i0, i1;
        unpack_block(s.meta.data(), b, i0, i1);
        const double v0 = static_cast<double>(s.values[b * 2]);
        const double v1 = static_cast<double>(s.values[b * 2 + 1]);
        const T* x0 = x + (j * 4 + i0) * xcols;
        const T* x1 = x + (j * 4 + i1) * xcols;
        for (std::size_t c = 0; c < xcols; ++c)
          acc[c] += v0 * static_cast<double>(x0[c]) + v1 * static_cast<double>(x1[c]);
      }
      T* orow = out + static_cast<std::size_t>(r) * xcols;
      for (std::size_t c = 0; c < xcols; ++c) orow[c] = static_cast<T>(acc[c]);
    }
  }
}

template <typename T>
void dense_matmul_baseline(const T* w, std::uint32_t rows, std::uint32_t cols, const T* x,
                           std::size_t xcols, T* out) {
  const long rowsi = static_cast<long>(rows);
#pragma omp parallel
  {
    std::vector<double> acc(xcols);
#pragma omp for schedule(static)
    for (long r = 0; r < rowsi; ++r) {
      std::fill(acc.begin(), acc.end(), 0.0);
      const T* wrow = w + static_cast<std::size_t>(r) * cols;
      for (std::size_t k = 0; k < cols; ++k) {
        const double wv = static_cast<double>(wrow[k]);
        const T* xrow = x + k * xcols;
        for (std::size_t c = 0; c < xcols; ++c) acc[c] += wv * static_cast<double>(xrow[c]);
      }
      T* orow = out + static_cast<std::size_t>(r) * xcols;
      for (std::size_t c = 0; c < xcols; ++c) orow[c] = static_cast<T>(acc[c]);
    }
  }
}

namespace serial {

template <typename T>
void sparse24_spmm(const Sparse24<T>& s, const T* x, std::size_t xcols, T* out) {
  const std::size_t blocks_per_row = s.cols / 4;
  std::vector<double> acc(xcols);
  for (std::size_t r = 0; r < s.rows; ++r) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const std::size_t row_block0 = r * blocks_per_row;
    for (std::size_t j = 0; j < blocks_per_row; ++j) {
      const std::size_t b = row_block0 + j;
      unsigned i0, i1;
      unpack_block(s.meta.data(), b, i0, i1);
      const double v0 = static_cast<double>(s.values[b * 2]);
      const double v1 = static_cast<double>(s.values[b * 2 + 1]);
      const T* x0 = x + (j * 4 + i0) * xcols;
      const T* x1 = x + (j * 4 + i1) * xcols;
      for (std::size_t c = 0; c < xcols; ++c)
        acc[c] += v0 * static_cast<double>(x0[c]) + v1 * static_cast<double>(x1[c]);
    }
    T* orow = out + r * xcols;
    for (std::size_t c = 0; c < xcols; ++c) orow[c] = static_cast<T>(acc[c]);
  }
}

template void sparse24_spmm<float>(const Sparse24<float>&, const float*, std::size_t, float*);
template void sparse24_spmm<double>(const Sparse24<double>&, const double*, std::size_t, double*);

}  // namespace serial

template <typename T>
std::vector<std::uint8_t> sparse24_serialize(const Sparse24<T>& s) {
  ByteWriter w;
  w.raw(kSparseMagic, 4);
  w.u16(kSparseVersion);
  w.u32(s.rows);
  w.u32(s.cols);
  w.u8(dtype_tag<T>());
  for (T v : s.values) {
    if constexpr (sizeof(T) == 4)
      w.f32(static_cast<float>(v));
    else
      w.f64(static_cast<double>(v));
  }
  w.raw(s.meta.data(), s.meta.size());
  return w.take();
}

template <typename T>
Sparse24<T> sparse24_deserialize(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes);
  const auto magic = r.raw(4);
  if (std::memcmp(magic.data(), kSparseMagic, 4) != 0)
    throw FormatError("bad sparse24 magic", 0);
  if (r.u16() != kSparseVersion) throw FormatError("unsupported sparse24 version", 4);
  Sparse24<T> s;
  s.rows = r.u32();
  s.cols = r.u32();
  if (s.cols % 4 != 0) throw FormatError("sparse24 cols not divisible by 4", 10);
  const std::uint8_t tag = r.u8();
  if (tag != dtype_tag<T>()) throw FormatError("sparse24 dtype mismatch", 14);
  const std::size_t blocks = s.num_blocks();
  s.values.resize(blocks * 2);
  for (T& v : s.values) {
    if constexpr (sizeof(T) == 4)
      v = static_cast<T>(r.f32());
    else
      v = static_cast<T>(r.f64());
  }
  s.meta = r.raw((blocks + 1) / 2);
  if (!r.done()) throw FormatError("trailing bytes after sparse24 payload", r.offset());
  return s;
}

std::string BenchReport::to_text() const {
  std::ostringstream os;
  os.precision(17);
  for (const Entry& e : entries) {
    os << "size=" << e.size << " dense_ms=" << e.dense_ms << " sparse_ms=" << e.sparse_ms
       << " speedup=" << e.speedup << " dense_bytes=" << e.dense_bytes
       << " sparse_bytes=" << e.sparse_bytes << " footprint_ratio=" << e.footprint_ratio << "\n";
  }
  return os.str();
}

BenchReport BenchReport::parse(const std::string& text) {
  BenchReport rep;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    Entry e;
    std::istringstream ls(line);
    std::string field;
    while (ls >> field) {
      const std::size_t eq = field.find('=');
      if (eq == std::string::npos) throw ValidationError("bad bench field: " + field);
      const std::string key = field.substr(0, eq);
      const std::string value = field.substr(eq + 1);
      if (key == "size") e.size = std::stoull(value);
      else if (key == "dense_ms") e.dense_ms = std::stod(value);
      else if (key == "sparse_ms") e.sparse_ms = std::stod(value);
      else if (key == "speedup") e.speedup = std::stod(value);
      else if (key == "dense_bytes") e.dense_bytes = std::stoull(value);
      else if (key == "sparse_bytes") e.sparse_bytes = std::stoull(value);
      else if (key == "footprint_ratio") e.footprint_ratio = std::stod(value);
      else throw ValidationError("unknown bench key: " + key);
    }
    rep.entries.push_back(e);
  }
  return rep;
}

BenchReport run_benchmark(const std::vector<std::size_t>& sizes, int repeats, std::uint64_t seed) {
  if (repeats <= 0) throw ValidationError("bench repeats must be positive");
  BenchReport rep;
  for (std::size_t size : sizes) {
    if (size == 0 || size % 4 != 0)
      throw ValidationError("bench sizes must be positive multiples of 4");
    const std::uint32_t n = static_cast<std::uint32_t>(size);
    std::vector<float> w(size * size), x(size * size);
    Rng rng(derive_seed(seed, "bench", size));
    for (float& v : w) v = static_cast<float>(rng.normal());
    for (float& v : x) v = static_cast<float>(rng.normal());
    // Random 2:4 mask.
    LayerMask mask;
    mask.tensor_name = "bench";
    mask.rows = n;
    mask.cols = n;
    mask.block_indices.resize(size * size / 4);
    for (auto& idx : mask.block_indices)
      idx = static_cast<std::uint16_t>(rng.uniform_index(6));
    const Sparse24<float> s = sparse24_compress(w.data(), n, n, mask);
    std::vector<float> out(size * size);
    auto time_ms = [&](auto&& fn) {
      std::vector<double> times;
      for (int rep_i = 0; rep_i < repeats; ++rep_i) {
        const auto start = std::chrono::steady_clock::now();
        fn();
        const auto stop = std::chrono::steady_clock::now();
        times.push_back(std::chrono::duration<double, std::milli>(stop - start).count());
      }
      std::sort(times.begin(), times.end());
      return times[times.size() / 2];
    };
    BenchReport::Entry e;
    e.size = size;
    e.dense_ms = time_ms([&] { dense_matmul_baseline(w.data(), n, n, x.data(), size, out.data()); });
    e.sparse_ms = time_ms([&] { sparse24_spmm(s, x.data(), size, out.data()); });
    e.speedup = e.dense_ms / e.sparse_ms;
    e.dense_bytes = s.dense_bytes();
    e.sparse_bytes = s.sparse_bytes();
    e.footprint_ratio = static_cast<double>(e.sparse_bytes) / static_cast<double>(e.dense_bytes);
    rep.entries.push_back(e);
  }
  return rep;
}

template Sparse24<float> sparse24_compress<float>(const float*, std::uint32_t, std::uint32_t,
                                                  const LayerMask&);
template Sparse24<double> sparse24_compress<double>(const double*, std::uint32_t, std::uint32_t,
                                                    const LayerMask&);
template std::vector<float> sparse24_decompress<float>(const Sparse24<float>&);
template std::vector<double> sparse24_decompress<double>(const Sparse24<double>&);
template void sparse24_spmm<float>(const Sparse24<float>&, const float*, std::size_t, float*);
template void sparse24_spmm<double>(const Sparse24<double>&, const double*, std::size_t, double*);
template void dense_matmul_baseline<float>(const float*, std::uint32_t, std::uint32_t,
                                           const float*, std::size_t, float*);
template void dense_matmul_baseline<double>(const double*, std::uint32_t, std::uint32_t,
                                            const double*, std::size_t, double*);
template std::vector<std::uint8_t> sparse24_serialize<float>(const Sparse24<float>&);
template std::vector<std::uint8_t> sparse24_serialize<double>(const Sparse24<double>&);
template Sparse24<float> sparse24_deserialize<float>(const std::vector<std::uint8_t>&);
template Sparse24<double> sparse24_deserialize<double>(const std::vector<std::uint8_t>&);

}  // namespace nmsparse
