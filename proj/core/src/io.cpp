// SPDX-License-Identifier: Apache-2.0

#include "rblr/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"

namespace rblr {

namespace {

constexpr char kTensorMagic[4] = {'R', 'B', 'L', 'R'};
constexpr char kCheckpointMagic[8] = {'R', 'B', 'L', 'R', 'C', 'K', 'P', 'T'};
constexpr std::uint16_t kVersion = 1;

using Bytes = std::vector<std::uint8_t>;

template <class T>
void put_le(Bytes& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <class T>
T get_le(const Bytes& in, std::size_t& off, const char* what) {
  if (in.size() - off < sizeof(T) || off > in.size()) {
    throw FormatError(FormatError::Code::TruncatedPayload, std::string("truncated header: missing ") + what);
  }
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(in[off + i]) << (8 * i));
  off += sizeof(T);
  return v;
}

std::size_t dtype_size(DType d) { return d == DType::Float32 ? 4 : 8; }

}  // namespace

Bytes encode_tensor(const RawTensor& t) {
  std::uint64_t count = 1;
  for (auto d : t.dims) count *= d;
  if (count != t.values.size()) {
    throw FormatError(FormatError::Code::SizeMismatch, "tensor dims product " + std::to_string(count) +
                                                           " does not match " + std::to_string(t.values.size()) +
                                                           " values");
  }
  if (t.dims.size() > 255) throw FormatError(FormatError::Code::BadRank, "tensor rank exceeds 255");
  Bytes out(std::begin(kTensorMagic), std::end(kTensorMagic));
  put_le<std::uint16_t>(out, kVersion);
  out.push_back(static_cast<std::uint8_t>(t.dtype));
  out.push_back(static_cast<std::uint8_t>(t.dims.size()));
  for (auto d : t.dims) put_le<std::uint64_t>(out, d);
  out.reserve(out.size() + t.values.size() * dtype_size(t.dtype));
  for (double v : t.values) {
    if (t.dtype == DType::Float32) {
      put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    } else {
      put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    }
  }
  return out;
}

RawTensor decode_tensor(const Bytes& bytes, std::size_t& offset, bool exact) {
  std::size_t off = offset;
  if (bytes.size() < off + 4 || !std::equal(std::begin(kTensorMagic), std::end(kTensorMagic), bytes.begin() + off)) {
    throw FormatError(FormatError::Code::BadMagic, "bad magic: not an RBLR tensor file");
  }
  off += 4;
  const auto version = get_le<std::uint16_t>(bytes, off, "version");
  if (version != kVersion) {
    throw FormatError(FormatError::Code::UnsupportedVersion, "unsupported tensor file version " + std::to_string(version));
  }
  const auto dtype_code = get_le<std::uint8_t>(bytes, off, "dtype");
  if (dtype_code != 1 && dtype_code != 2) {
    throw FormatError(FormatError::Code::UnknownDtype, "unknown dtype code " + std::to_string(dtype_code));
  }
  RawTensor t;
  t.dtype = static_cast<DType>(dtype_code);
  const auto rank = get_le<std::uint8_t>(bytes, off, "rank");
  std::uint64_t count = 1;
  for (int r = 0; r < rank; ++r) {
    const auto d = get_le<std::uint64_t>(bytes, off, "dims");
    if (d != 0 && count > (std::uint64_t{1} << 60) / d) {
      throw FormatError(FormatError::Code::SizeMismatch, "tensor dims overflow");
    }
    count *= d;
    t.dims.push_back(d);
  }
  const std::size_t esize = dtype_size(t.dtype);
  const std::uint64_t need = count * esize;
  const std::size_t avail = bytes.size() - off;
  if (avail < need) {
    throw FormatError(FormatError::Code::TruncatedPayload, "truncated payload: expected " + std::to_string(need) +
                                                               " bytes, found " + std::to_string(avail));
  }
  if (exact && avail != need) {
    throw FormatError(FormatError::Code::SizeMismatch, "payload size mismatch: dims imply " + std::to_string(need) +
                                                           " bytes, file has " + std::to_string(avail));
  }
  t.values.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    if (t.dtype == DType::Float32) {
      t.values[i] = std::bit_cast<float>(get_le<std::uint32_t>(bytes, off, "payload"));
    } else {
      t.values[i] = std::bit_cast<double>(get_le<std::uint64_t>(bytes, off, "payload"));
    }
  }
  offset = off;
  return t;
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatError::Code::Io, "cannot open '" + path.string() + "'");
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, const Bytes& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatError::Code::Io, "cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(FormatError::Code::Io, "write failed for '" + path.string() + "'");
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, Bytes(text.begin(), text.end()));
}

void write_raw_tensor(const std::filesystem::path& path, const RawTensor& t) { write_file(path, encode_tensor(t)); }

RawTensor read_raw_tensor(const std::filesystem::path& path) {
  const Bytes bytes = read_file(path);
  std::size_t off = 0;
  return decode_tensor(bytes, off, true);
}

void write_tensor(const std::filesystem::path& path, const Tensor5D& t, DType dtype) {
  const Shape s = t.shape();
  RawTensor raw{dtype,
                {static_cast<std::uint64_t>(s.nx), static_cast<std::uint64_t>(s.ny), static_cast<std::uint64_t>(s.nz),
                 static_cast<std::uint64_t>(s.nchan)},
                std::vector<double>(t.data().begin(), t.data().end())};
  write_raw_tensor(path, raw);
}

namespace {

Tensor5D to_tensor(RawTensor raw, const std::string& where) {
  if (raw.dims.size() != 4) {
    throw FormatError(FormatError::Code::BadRank,
                      where + ": expected a rank-4 tensor, got rank " + std::to_string(raw.dims.size()));
  }
  const Shape s{static_cast<std::int64_t>(raw.dims[0]), static_cast<std::int64_t>(raw.dims[1]),
                static_cast<std::int64_t>(raw.dims[2]), static_cast<std::int64_t>(raw.dims[3])};
  if (!s.valid()) throw FormatError(FormatError::Code::BadRank, where + ": tensor has a zero dimension");
  return Tensor5D(s, std::move(raw.values));
}

}  // namespace

Tensor5D read_tensor(const std::filesystem::path& path) { return to_tensor(read_raw_tensor(path), path.string()); }

std::vector<int> read_labels(const std::filesystem::path& path, const Shape& grid) {
  const Tensor5D t = read_tensor(path);
  if (!t.shape().same_grid(grid) || t.channels() != 1) {
    throw ShapeError("labels '" + path.string() + "' have shape " + t.shape().str() + ", expected " +
                     grid.with_channels(1).str());
  }
  std::vector<int> out;
  out.reserve(t.size());
  for (double v : t.data()) {
    if (v != std::floor(v) || v < 0) throw FormatError(FormatError::Code::BadHeader, "labels must be non-negative integers");
    out.push_back(static_cast<int>(v));
  }
  return out;
}

void write_labels(const std::filesystem::path& path, const Shape& grid, const std::vector<int>& labels) {
  Tensor5D t(grid.with_channels(1), std::vector<double>(labels.begin(), labels.end()));
  write_tensor(path, t, DType::Float32);
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const std::filesystem::path& path, const Model& model) {
  using nlohmann::json;
  const NetworkSpec& spec = model.spec;
  json header;
  header["format"] = "rblr-checkpoint";
  header["version"] = kVersion;
  header["input_shape"] = {spec.input_shape.nx, spec.input_shape.ny, spec.input_shape.nz, spec.input_shape.nchan};
  header["h"] = spec.h;
  header["activation"] = spec.activation.kind == Activation::Kind::ReLU ? "relu" : "identity";
  header["classes"] = model.head.classes;
  header["layers"] = json::array();
  for (const auto& l : spec.layers) {
    header["layers"].push_back({{"m", l.m}, {"n", l.n}, {"resolution", std::string(to_string(l.resolution))}});
  }
  const std::string text = header.dump();

  std::vector<std::pair<std::string, RawTensor>> records;
  for (std::size_t j = 0; j < model.stacks.size(); ++j) {
    const auto& ks = model.stacks[j];
    char name[32];
    std::snprintf(name, sizeof name, "layer.%03zu.", j);
    records.push_back({std::string(name) + "kernels",
                       RawTensor{DType::Float64,
                                 {kKernelTaps, static_cast<std::uint64_t>(ks.cols()), static_cast<std::uint64_t>(ks.rows())},
                                 {ks.weights().begin(), ks.weights().end()}}});
    records.push_back({std::string(name) + "bias",
                       RawTensor{DType::Float64, {static_cast<std::uint64_t>(ks.rows())}, {ks.bias().begin(), ks.bias().end()}}});
  }
  records.push_back({"head.weights", RawTensor{DType::Float64,
                                               {static_cast<std::uint64_t>(model.head.channels),
                                                static_cast<std::uint64_t>(model.head.classes)},
                                               model.head.weights}});
  records.push_back({"head.bias", RawTensor{DType::Float64, {static_cast<std::uint64_t>(model.head.classes)}, model.head.bias}});

  Bytes out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  put_le<std::uint16_t>(out, kVersion);
  put_le<std::uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(records.size()));
  for (const auto& [name, raw] : records) {
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    const Bytes enc = encode_tensor(raw);
    out.insert(out.end(), enc.begin(), enc.end());
  }
  write_file(path, out);
}

Model load_checkpoint(const std::filesystem::path& path) {
  using nlohmann::json;
  const Bytes bytes = read_file(path);
  if (bytes.size() < 8 || !std::equal(std::begin(kCheckpointMagic), std::end(kCheckpointMagic), bytes.begin())) {
    throw FormatError(FormatError::Code::BadMagic, "bad magic: '" + path.string() + "' is not an RBLR checkpoint");
  }
  std::size_t off = 8;
  const auto version = get_le<std::uint16_t>(bytes, off, "version");
  if (version != kVersion) {
    throw FormatError(FormatError::Code::UnsupportedVersion, "unsupported checkpoint version " + std::to_string(version));
  }
  const auto hlen = get_le<std::uint64_t>(bytes, off, "header length");
  if (bytes.size() - off < hlen) throw FormatError(FormatError::Code::TruncatedPayload, "truncated checkpoint header");
  Model model;
  try {
    const json header = json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(off),
                                    bytes.begin() + static_cast<std::ptrdiff_t>(off + hlen));
    const auto& in = header.at("input_shape");
    model.spec.input_shape = {in.at(0).get<std::int64_t>(), in.at(1).get<std::int64_t>(), in.at(2).get<std::int64_t>(),
                              in.at(3).get<std::int64_t>()};
    model.spec.h = header.at("h").get<double>();
    model.spec.activation =
        header.at("activation").get<std::string>() == "identity" ? Activation::identity() : Activation::relu();
    model.head.classes = header.at("classes").get<int>();
    for (const auto& l : header.at("layers")) {
      model.spec.layers.push_back(
          {l.at("m").get<int>(), l.at("n").get<int>(), resolution_from_string(l.at("resolution").get<std::string>())});
    }
  } catch (const json::exception& e) {
    throw FormatError(FormatError::Code::BadHeader, std::string("bad checkpoint header: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(FormatError::Code::BadHeader, std::string("bad checkpoint header: ") + e.what());
  }
  off += hlen;
  model.spec.validate();

  const auto count = get_le<std::uint32_t>(bytes, off, "record count");
  std::vector<std::pair<std::string, RawTensor>> records;
  for (std::uint32_t r = 0; r < count; ++r) {
    const auto nlen = get_le<std::uint16_t>(bytes, off, "record name length");
    if (bytes.size() - off < nlen) throw FormatError(FormatError::Code::TruncatedPayload, "truncated record name");
    std::string name(bytes.begin() + static_cast<std::ptrdiff_t>(off), bytes.begin() + static_cast<std::ptrdiff_t>(off + nlen));
    off += nlen;
    records.emplace_back(std::move(name), decode_tensor(bytes, off, false));
  }
  if (off != bytes.size()) throw FormatError(FormatError::Code::SizeMismatch, "trailing bytes after checkpoint records");

  auto take = [&](const std::string& name) -> RawTensor& {
    for (auto& [n, raw] : records) {
      if (n == name) return raw;
    }
    throw FormatError(FormatError::Code::BadHeader, "checkpoint is missing record '" + name + "'");
  };
  for (std::size_t j = 0; j < model.spec.layers.size(); ++j) {
    char name[32];
    std::snprintf(name, sizeof name, "layer.%03zu.", j);
    const auto& l = model.spec.layers[j];
    try {
      model.stacks.emplace_back(l.m, l.n, take(std::string(name) + "kernels").values, take(std::string(name) + "bias").values);
    } catch (const ShapeError& e) {
      throw FormatError(FormatError::Code::SizeMismatch, std::string(name) + ": " + e.what());
    }
  }
  model.head.channels = static_cast<int>(model.spec.output_shape().nchan);
  model.head.weights = take("head.weights").values;
  model.head.bias = take("head.bias").values;
  if (model.head.weights.size() != static_cast<std::size_t>(model.head.classes * model.head.channels) ||
      model.head.bias.size() != static_cast<std::size_t>(model.head.classes)) {
    throw FormatError(FormatError::Code::SizeMismatch, "head record sizes do not match the header");
  }
  return model;
}

// ---------------------------------------------------------------------------
// Datasets

SyntheticVideo make_synthetic_video(std::int64_t nx, std::int64_t ny, std::int64_t nt, std::uint64_t seed,
                                    int coarsenings) {
  const std::int64_t div = std::int64_t{1} << coarsenings;
  if (nx < 1 || ny < 1 || nt < 1 || nx % div || ny % div || nt % div) {
    throw ShapeError("synthetic video dims " + std::to_string(nx) + "x" + std::to_string(ny) + "x" + std::to_string(nt) +
                     " must be positive and divisible by " + std::to_string(div));
  }
  std::mt19937_64 rng(seed);
  const std::int64_t sx = std::max<std::int64_t>(1, nx / 4);
  const std::int64_t sy = std::max<std::int64_t>(1, ny / 4);
  std::uniform_int_distribution<std::int64_t> px(0, nx - sx), py(0, ny - sy);
  std::uniform_int_distribution<int> speed(1, 2), sign(0, 1);
  std::int64_t x0 = px(rng), y0 = py(rng);
  std::int64_t vx = speed(rng) * (sign(rng) ? 1 : -1);
  std::int64_t vy = speed(rng) * (sign(rng) ? 1 : -1);

  constexpr double kBackground[3] = {0.2, 0.3, 0.6};
  constexpr double kObject[3] = {0.9, 0.9, 0.2};
  constexpr double kNoise = 0.2;
  std::normal_distribution<double> noise(0.0, kNoise);

  SyntheticVideo sv;
  sv.video = Tensor5D({nx, ny, nt, 3});
  sv.labels.assign(static_cast<std::size_t>(nx * ny * nt), 0);
  for (std::int64_t t = 0; t < nt; ++t) {
    for (std::int64_t y = y0; y < y0 + sy; ++y) {
      for (std::int64_t x = x0; x < x0 + sx; ++x) sv.labels[static_cast<std::size_t>((t * ny + y) * nx + x)] = 1;
    }
    // Bounce off the frame edges.
    if (x0 + vx < 0 || x0 + vx > nx - sx) vx = -vx;
    if (y0 + vy < 0 || y0 + vy > ny - sy) vy = -vy;
    x0 = std::clamp<std::int64_t>(x0 + vx, 0, nx - sx);
    y0 = std::clamp<std::int64_t>(y0 + vy, 0, ny - sy);
  }
  for (std::int64_t c = 0; c < 3; ++c) {
    auto ch = sv.video.channel(c);
    for (std::size_t v = 0; v < ch.size(); ++v) {
      ch[v] = (sv.labels[v] ? kObject[c] : kBackground[c]) + noise(rng);
    }
  }
  if (nt >= 3) {
    sv.labeled_slices = {static_cast<int>(nt / 8), static_cast<int>(nt / 2), static_cast<int>(nt - 1 - nt / 8)};
  } else {
    for (int t = 0; t < nt; ++t) sv.labeled_slices.push_back(t);
  }
  std::sort(sv.labeled_slices.begin(), sv.labeled_slices.end());
  sv.labeled_slices.erase(std::unique(sv.labeled_slices.begin(), sv.labeled_slices.end()), sv.labeled_slices.end());
  return sv;
}

Dataset make_dataset(const SyntheticVideo& sv) {
  Dataset d;
  d.video = sv.video;
  d.labels = sv.labels;
  d.classes = 2;
  d.labeled_slices = sv.labeled_slices;
  const Shape s = sv.video.shape();
  const auto plane = static_cast<std::size_t>(s.nx * s.ny);
  d.loss_mask.assign(sv.labels.size(), 0);
  d.eval_mask.assign(sv.labels.size(), 1);
  for (int t : sv.labeled_slices) {
    std::fill_n(d.loss_mask.begin() + static_cast<std::ptrdiff_t>(plane * static_cast<std::size_t>(t)), plane, 1);
  }
  return d;
}

Tensor5D import_frames(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw FormatError(FormatError::Code::Io, "cannot open manifest '" + manifest.string() + "'");
  std::string line;
  std::int64_t w = 0, h = 0, c = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    if (!(ls >> w >> h >> c) || w < 1 || h < 1 || c < 1) {
      throw FormatError(FormatError::Code::BadHeader, "manifest '" + manifest.string() +
                                                          "': first line must be 'width height channels'");
    }
    break;
  }
  if (w == 0) throw FormatError(FormatError::Code::BadHeader, "manifest '" + manifest.string() + "' is empty");
  std::vector<std::filesystem::path> frames;
  while (std::getline(in, line)) {
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t\r");
    frames.push_back(manifest.parent_path() / line.substr(b, e - b + 1));
  }
  if (frames.empty()) throw FormatError(FormatError::Code::BadHeader, "manifest '" + manifest.string() + "' lists no frames");

  const auto nt = static_cast<std::int64_t>(frames.size());
  Tensor5D out({w, h, nt, c});
  const auto expected = static_cast<std::size_t>(w * h * c);
  for (std::int64_t t = 0; t < nt; ++t) {
    const auto& f = frames[static_cast<std::size_t>(t)];
    if (!std::filesystem::exists(f)) throw FormatError(FormatError::Code::Io, "missing frame file '" + f.string() + "'");
    const Bytes px = read_file(f);
    if (px.size() != expected) {
      throw FormatError(FormatError::Code::SizeMismatch, "frame '" + f.string() + "' has " + std::to_string(px.size()) +
                                                             " bytes, expected " + std::to_string(expected) + " (" +
                                                             std::to_string(w) + "x" + std::to_string(h) + "x" +
                                                             std::to_string(c) + ")");
    }
    for (std::int64_t ch = 0; ch < c; ++ch) {
      for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
          out.at(x, y, t, ch) = px[static_cast<std::size_t>((ch * h + y) * w + x)] / 255.0;
        }
      }
    }
  }
  return out;
}

}  // namespace rblr
