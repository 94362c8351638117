// SPDX-License-Identifier: Apache-2.0
//
// File formats and datasets.
//
// Tensor file (all integers little-endian):
//   "RBLR"            4 bytes magic
//   version           u16 (= 1)
//   dtype             u8  (1 = float32, 2 = float64)
//   rank              u8
//   dims              rank x u64, fastest-varying axis first
//   payload           product(dims) scalars, little-endian IEEE-754
// A Tensor5D is written with rank 4 and dims (nx, ny, nz, nchan).
//
// Checkpoint:
//   "RBLRCKPT"        8 bytes magic
//   version           u16 (= 1)
//   header_len        u64, then header_len bytes of JSON describing the network
//   record_count      u32
//   records           u16 name length, name bytes, one tensor file each

#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "rblr/tensor.hpp"
#include "rblr/trainer.hpp"

namespace rblr {

enum class DType : std::uint8_t { Float32 = 1, Float64 = 2 };

class FormatError : public std::runtime_error {
 public:
  enum class Code { Io, BadMagic, UnsupportedVersion, UnknownDtype, TruncatedPayload, SizeMismatch, BadRank, BadHeader };
  FormatError(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Code code() const { return code_; }

 private:
  Code code_;
};

struct RawTensor {
  DType dtype = DType::Float64;
  std::vector<std::uint64_t> dims;
  std::vector<double> values;
};

std::vector<std::uint8_t> encode_tensor(const RawTensor& t);
/// Decodes one tensor starting at `offset` and advances it. With
/// `exact`, trailing bytes after the payload are a SizeMismatch error.
RawTensor decode_tensor(const std::vector<std::uint8_t>& bytes, std::size_t& offset, bool exact);

void write_tensor(const std::filesystem::path& path, const Tensor5D& t, DType dtype = DType::Float64);
Tensor5D read_tensor(const std::filesystem::path& path);
void write_raw_tensor(const std::filesystem::path& path, const RawTensor& t);
RawTensor read_raw_tensor(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
void write_text(const std::filesystem::path& path, const std::string& text);

void save_checkpoint(const std::filesystem::path& path, const Model& model);
Model load_checkpoint(const std::filesystem::path& path);

struct SyntheticVideo {
  Tensor5D video;
  /// 1 inside the moving cube, 0 elsewhere; one entry per voxel.
  std::vector<int> labels;
  /// Time slices (z indices) that carry annotations.
  std::vector<int> labeled_slices;
};

/// A bright cube moving across a noisy 3-channel background. Every spatial
/// dim must be divisible by 2^coarsenings.
SyntheticVideo make_synthetic_video(std::int64_t nx, std::int64_t ny, std::int64_t nt, std::uint64_t seed,
                                    int coarsenings = 0);

/// Loss mask = annotated slices, evaluation mask = every voxel.
Dataset make_dataset(const SyntheticVideo& sv);

/// Loads frames listed in a manifest: a "width height channels" line, then
/// one frame path per line (relative to the manifest). Frames are raw 8-bit
/// planar files (channel, row, column) scaled to [0, 1] and stacked along z.
Tensor5D import_frames(const std::filesystem::path& manifest);

/// Class ids stored as a rank-4 single-channel tensor file.
std::vector<int> read_labels(const std::filesystem::path& path, const Shape& grid);
void write_labels(const std::filesystem::path& path, const Shape& grid, const std::vector<int>& labels);

}  // namespace rblr
