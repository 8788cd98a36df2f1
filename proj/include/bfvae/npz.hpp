// SPDX-License-Identifier: Apache-2.0
//
// Archives of named dense arrays in the npy/npz layout: a zip container of
// one .npy member per array. This single format backs both dataset files
// (imgs / latents_values / latents_classes / metadata) and checkpoints.
// Writing always produces stored (uncompressed) members; reading accepts
// stored and deflated members, so files produced by numpy.savez /
// savez_compressed load as-is. No zip64: archives must stay under 4 GiB.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace bfvae::npz {

struct Array {
  std::string descr;           // numpy dtype: "<f8", "<i8", "|u1", ...
  std::vector<size_t> shape;   // C-order
  std::vector<uint8_t> data;   // raw little-endian payload

  size_t elems() const;
  size_t itemsize() const;

  static Array from_doubles(std::vector<size_t> shape,
                            const std::vector<double>& v);
  static Array from_int64(std::vector<size_t> shape,
                          const std::vector<int64_t>& v);
  static Array from_bytes(std::vector<size_t> shape, std::vector<uint8_t> v);
  static Array from_string(const std::string& s);

  std::vector<double> to_doubles() const;   // f8/f4/i8/i4/u1 widened
  std::vector<int64_t> to_int64() const;    // i8/i4/u1
  std::string to_string() const;            // |u1 payload as text
};

using Archive = std::map<std::string, Array>;

// Throws std::runtime_error with a descriptive message on malformed input
// (bad magic, truncated members, CRC mismatch, unsupported compression).
Archive load(const std::string& path);

void save(const std::string& path, const Archive& arrays);

}  // namespace bfvae::npz
