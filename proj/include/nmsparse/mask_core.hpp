#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nmsparse/tensor.hpp"

namespace nmsparse {

struct BlockMask {
  std::vector<std::uint8_t> bits;  // length m, entries 0/1
  int ones() const;
};

// All C(m, n) keep-n-of-m patterns. The 2:4 ordering is frozen so block
// indices stay stable across versions; other patterns use
// descending-lexicographic order.
struct MaskCandidateSet {
  int n = 0;
  int m = 0;
  std::vector<std::vector<std::uint8_t>> masks;

  int size() const { return static_cast<int>(masks.size()); }
  BlockMask block(int i) const { return BlockMask{masks.at(static_cast<std::size_t>(i))}; }
  Tensor as_tensor() const;  // |S| x m, for the differentiable-mask matmul
};

MaskCandidateSet enumerate_candidates(int n, int m);

// sim_i = prior . candidate_i - n/2 (half-integers when n is odd).
std::vector<double> mask_similarity(const BlockMask& prior, const MaskCandidateSet& set);

// pi'_i = pi_i + stddev(pi) * sim_i * alpha, where stddev is the sample
// standard deviation over this block's |S| logits.
std::vector<double> apply_prior(std::span<const double> logits, const BlockMask& prior,
                                double alpha, const MaskCandidateSet& set);

int argmax_lowest_index(std::span<const double> logits);
BlockMask select_final_mask(std::span<const double> logits, const MaskCandidateSet& set);

// Hard per-block mask choice for one weight matrix, stored as candidate
// indices (blocks run along the row-major column dimension).
struct LayerMask {
  std::string tensor_name;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<std::uint16_t> block_indices;  // rows * cols/m entries

  std::size_t num_blocks() const { return block_indices.size(); }
  std::size_t param_count() const { return static_cast<std::size_t>(rows) * cols; }
  // rows x cols 0/1 expansion
  std::vector<std::uint8_t> expand(const MaskCandidateSet& set) const;
};

void validate_layer_mask(const LayerMask& mask, const MaskCandidateSet& set);

// ---------------------------------------------------------------------
// On-disk container. Header: magic "NMMK" | version u16 | n u8 | m u8 |
// tensor_count u32; per tensor: name_len u16 + name | rows u32 | cols u32 |
// payload_len u32 | payload. All integers little-endian. Version 1 payloads
// are range-coded block indices over a uniform |S|-symbol model; version 2
// payloads are raw mask bits, row-major, LSB-first.
// ---------------------------------------------------------------------

inline constexpr std::uint16_t kMaskArchiveVersionCoded = 1;
inline constexpr std::uint16_t kMaskArchiveVersionRaw = 2;

struct MaskArchive {
  int n = 0;
  int m = 0;
  std::vector<LayerMask> masks;
};

std::vector<std::uint8_t> encode_masks(const std::vector<LayerMask>& masks, int n, int m);
std::vector<std::uint8_t> encode_masks_raw(const std::vector<LayerMask>& masks, int n, int m);
MaskArchive decode_masks(const std::vector<std::uint8_t>& bytes);

// Mean payload bits per parameter of an encoded archive.
double archive_bits_per_param(const std::vector<std::uint8_t>& bytes);

}  // namespace nmsparse
