#include "nmsparse/mask_core.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "nmsparse/range_coder.hpp"
#include "nmsparse/serialize.hpp"

namespace nmsparse {

namespace {

constexpr char kMagic[4] = {'N', 'M', 'M', 'K'};

// Eq.-order candidate list for the 2:4 pattern.
const std::vector<std::vector<std::uint8_t>> k24Candidates = {
    {1, 1, 0, 0}, {1, 0, 1, 0}, {1, 0, 0, 1}, {0, 1, 0, 1}, {0, 1, 1, 0}, {0, 0, 1, 1},
};

std::size_t binomial(int m, int n) {
  std::size_t r = 1;
  for (int i = 0; i < n; ++i) r = r * static_cast<std::size_t>(m - i) / static_cast<std::size_t>(i + 1);
  return r;
}

}  // namespace

int BlockMask::ones() const {
  int s = 0;
  for (std::uint8_t b : bits) s += b;
  return s;
}

Tensor MaskCandidateSet::as_tensor() const {
  Tensor t(Shape{static_cast<std::size_t>(size()), static_cast<std::size_t>(m)});
  for (int i = 0; i < size(); ++i)
    for (int j = 0; j < m; ++j)
      t.at(static_cast<std::size_t>(i) * static_cast<std::size_t>(m) + static_cast<std::size_t>(j)) =
          masks[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return t;
}

MaskCandidateSet enumerate_candidates(int n, int m) {
  if (n <= 0 || m <= 0 || n >= m || m > 16)
    throw ValidationError("invalid N:M pattern " + std::to_string(n) + ":" + std::to_string(m) +
                          " (need 0 < n < m <= 16)");
  MaskCandidateSet set;
  set.n = n;
  set.m = m;
  if (n == 2 && m == 4) {
    set.masks = k24Candidates;
    return set;
  }
  // Enumerate all n-of-m rows, then order descending as binary strings.
  std::vector<int> pick(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) pick[static_cast<std::size_t>(i)] = i;
  while (true) {
    std::vector<std::uint8_t> row(static_cast<std::size_t>(m), 0);
    for (int p : pick) row[static_cast<std::size_t>(p)] = 1;
    set.masks.push_back(std::move(row));
    int i = n - 1;
    while (i >= 0 && pick[static_cast<std::size_t>(i)] == m - n + i) --i;
    if (i < 0) break;
    ++pick[static_cast<std::size_t>(i)];
    for (int j = i + 1; j < n; ++j) pick[static_cast<std::size_t>(j)] = pick[static_cast<std::size_t>(j - 1)] + 1;
  }
  std::sort(set.masks.begin(), set.masks.end(),
            [](const auto& a, const auto& b) { return a > b; });
  if (set.masks.size() != binomial(m, n))
    throw ValidationError("candidate enumeration bug: wrong count");
  return set;
}

std::vector<double> mask_similarity(const BlockMask& prior, const MaskCandidateSet& set) {
  if (static_cast<int>(prior.bits.size()) != set.m)
    throw ValidationError("prior mask length " + std::to_string(prior.bits.size()) +
                          " does not match m=" + std::to_string(set.m));
  if (prior.ones() != set.n)
    throw ValidationError("prior mask must keep exactly n=" + std::to_string(set.n) + " entries");
  std::vector<double> sim(static_cast<std::size_t>(set.size()));
  const double center = static_cast<double>(set.n) / 2.0;
  for (int i = 0; i < set.size(); ++i) {
    int dot = 0;
    for (int j = 0; j < set.m; ++j)
      dot += prior.bits[static_cast<std::size_t>(j)] *
             set.masks[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    sim[static_cast<std::size_t>(i)] = static_cast<double>(dot) - center;
  }
  return sim;
}

std::vector<double> apply_prior(std::span<const double> logits, const BlockMask& prior,
                                double alpha, const MaskCandidateSet& set) {
  if (alpha < 0.0) throw ValidationError("prior strength alpha must be >= 0");
  if (logits.size() != static_cast<std::size_t>(set.size()))
    throw ValidationError("apply_prior: expected " + std::to_string(set.size()) + " logits");
  std::vector<double> out(logits.begin(), logits.end());
  if (alpha == 0.0) return out;
  bool all_equal = true;
  for (double v : logits) all_equal = all_equal && v == logits[0];
  if (all_equal) return out;  // zero deviation leaves the block untouched
  double mean = 0.0;
  for (double v : logits) mean += v;
  mean /= static_cast<double>(logits.size());
  double var = 0.0;
  for (double v : logits) var += (v - mean) * (v - mean);
  var /= static_cast<double>(logits.size() - 1);  // sample std over the block
  const double sd = std::sqrt(var);
  const std::vector<double> sim = mask_similarity(prior, set);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += sd * sim[i] * alpha;
  return out;
}

int argmax_lowest_index(std::span<const double> logits) {
  if (logits.empty()) throw ValidationError("argmax of empty vector");
  int best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = static_cast<int>(i);
  return best;
}

BlockMask select_final_mask(std::span<const double> logits, const MaskCandidateSet& set) {
  if (logits.size() != static_cast<std::size_t>(set.size()))
    throw ValidationError("select_final_mask: expected " + std::to_string(set.size()) + " logits");
  return set.block(argmax_lowest_index(logits));
}

std::vector<std::uint8_t> LayerMask::expand(const MaskCandidateSet& set) const {
  validate_layer_mask(*this, set);
  std::vector<std::uint8_t> out(param_count());
  const std::size_t m = static_cast<std::size_t>(set.m);
  for (std::size_t b = 0; b < block_indices.size(); ++b) {
    const auto& bits = set.masks[block_indices[b]];
    for (std::size_t j = 0; j < m; ++j) out[b * m + j] = bits[j];
  }
  return out;
}

void validate_layer_mask(const LayerMask& mask, const MaskCandidateSet& set) {
  const std::size_t m = static_cast<std::size_t>(set.m);
  if (mask.cols % m != 0)
    throw ValidationError("tensor " + mask.tensor_name + ": cols " + std::to_string(mask.cols) +
                          " not divisible by m=" + std::to_string(set.m));
  const std::size_t expect = mask.param_count() / m;
  if (mask.block_indices.size() != expect)
    throw ValidationError("tensor " + mask.tensor_name + ": expected " + std::to_string(expect) +
                          " block indices, got " + std::to_string(mask.block_indices.size()));
  for (std::size_t b = 0; b < mask.block_indices.size(); ++b)
    if (mask.block_indices[b] >= static_cast<std::uint16_t>(set.size()))
      throw ValidationError("tensor " + mask.tensor_name + ": block " + std::to_string(b) +
                            " has invalid candidate index " + std::to_string(mask.block_indices[b]));
}

namespace {

void write_header(ByteWriter& w, std::uint16_t version, int n, int m, std::uint32_t count) {
  w.raw(kMagic, 4);
  w.u16(version);
  w.u8(static_cast<std::uint8_t>(n));
  w.u8(static_cast<std::uint8_t>(m));
  w.u32(count);
}

}  // namespace

std::vector<std::uint8_t> encode_masks(const std::vector<LayerMask>& masks, int n, int m) {
  const MaskCandidateSet set = enumerate_candidates(n, m);
  ByteWriter w;
  write_header(w, kMaskArchiveVersionCoded, n, m, static_cast<std::uint32_t>(masks.size()));
  const auto total = static_cast<std::uint32_t>(set.size());
  for (const LayerMask& mask : masks) {
    validate_layer_mask(mask, set);
    std::vector<std::uint8_t> payload;
    RangeEncoder enc(payload);
    for (std::uint16_t idx : mask.block_indices) enc.encode(idx, 1, total);
    enc.finish();
    w.str16(mask.tensor_name);
    w.u32(mask.rows);
    w.u32(mask.cols);
    w.u32(static_cast<std::uint32_t>(payload.size()));
    w.raw(payload.data(), payload.size());
  }
  return w.take();
}

std::vector<std::uint8_t> encode_masks_raw(const std::vector<LayerMask>& masks, int n, int m) {
  const MaskCandidateSet set = enumerate_candidates(n, m);
  ByteWriter w;
  write_header(w, kMaskArchiveVersionRaw, n, m, static_cast<std::uint32_t>(masks.size()));
  for (const LayerMask& mask : masks) {
    const std::vector<std::uint8_t> bits = mask.expand(set);
    std::vector<std::uint8_t> payload((bits.size() + 7) / 8, 0);
    for (std::size_t i = 0; i < bits.size(); ++i)
      if (bits[i]) payload[i >> 3] |= static_cast<std::uint8_t>(1u << (i & 7));
    w.str16(mask.tensor_name);
    w.u32(mask.rows);
    w.u32(mask.cols);
    w.u32(static_cast<std::uint32_t>(payload.size()));
    w.raw(payload.data(), payload.size());
  }
  return w.take();
}

MaskArchive decode_masks(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes);
  const std::vector<std::uint8_t> magic = r.raw(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0)
    throw FormatError("bad mask archive magic", 0);
  const std::uint16_t version = r.u16();
  if (version != kMaskArchiveVersionCoded && version != kMaskArchiveVersionRaw)
    throw FormatError("unsupported mask archive version " + std::to_string(version), 4);
  MaskArchive archive;
  archive.n = r.u8();
  archive.m = r.u8();
  const MaskCandidateSet set = enumerate_candidates(archive.n, archive.m);
  const std::uint32_t count = r.u32();
  archive.masks.reserve(count);
  for (std::uint32_t t = 0; t < count; ++t) {
    LayerMask mask;
    mask.tensor_name = r.str16();
    mask.rows = r.u32();
    mask.cols = r.u32();
    const std::uint32_t payload_len = r.u32();
    const std::size_t payload_off = r.offset();
    const std::vector<std::uint8_t> payload = r.raw(payload_len);
    if (mask.cols % static_cast<std::uint32_t>(set.m) != 0)
      throw FormatError("tensor " + mask.tensor_name + ": cols not divisible by m", payload_off);
    const std::size_t blocks = mask.param_count() / static_cast<std::size_t>(set.m);
    mask.block_indices.resize(blocks);
    if (version == kMaskArchiveVersionCoded) {
      try {
        RangeDecoder dec(payload.data(), payload.size());
        for (std::size_t b = 0; b < blocks; ++b)
          mask.block_indices[b] =
              static_cast<std::uint16_t>(dec.decode_uniform(static_cast<std::uint32_t>(set.size())));
      } catch (const FormatError& e) {
        throw FormatError("tensor " + mask.tensor_name + ": " + e.what(),
                          payload_off + e.offset);
      }
    } else {
      const std::size_t params = mask.param_count();
      if (payload.size() != (params + 7) / 8)
        throw FormatError("tensor " + mask.tensor_name + ": raw payload size mismatch",
                          payload_off);
      const std::size_t m = static_cast<std::size_t>(set.m);
      for (std::size_t b = 0; b < blocks; ++b) {
        std::vector<std::uint8_t> bits(m);
        for (std::size_t j = 0; j < m; ++j) {
          const std::size_t i = b * m + j;
          bits[j] = (payload[i >> 3] >> (i & 7)) & 1u;
        }
        int found = -1;
        for (int ci = 0; ci < set.size(); ++ci)
          if (set.masks[static_cast<std::size_t>(ci)] == bits) {
            found = ci;
            break;
          }
        if (found < 0) {
          const std::size_t row = b * m / mask.cols;
          const std::size_t col = b * m % mask.cols;
          throw FormatError("tensor " + mask.tensor_name + ": block at row " +
                                std::to_string(row) + ", col " + std::to_string(col) +
                                " is not a valid " + std::to_string(set.n) + ":" +
                                std::to_string(set.m) + " pattern",
                            payload_off);
        }
        mask.block_indices[b] = static_cast<std::uint16_t>(found);
      }
    }
    archive.masks.push_back(std::move(mask));
  }
  if (!r.done()) throw FormatError("trailing bytes after mask archive", r.offset());
  return archive;
}

double archive_bits_per_param(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes);
  r.raw(4);
  r.u16();
  r.u8();
  r.u8();
  const std::uint32_t count = r.u32();
  std::size_t payload_bits = 0;
  std::size_t params = 0;
  for (std::uint32_t t = 0; t < count; ++t) {
    r.str16();
    const std::uint64_t rows = r.u32();
    const std::uint64_t cols = r.u32();
    const std::uint32_t payload_len = r.u32();
    r.raw(payload_len);
    payload_bits += static_cast<std::size_t>(payload_len) * 8;
    params += rows * cols;
  }
  if (params == 0) throw ValidationError("archive holds no parameters");
  return static_cast<double>(payload_bits) / static_cast<double>(params);
}

}  // namespace nmsparse
