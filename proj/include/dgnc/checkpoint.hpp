// Checkpoint file: magic "DGNC1", an embedded config echo (so evaluation can
// rebuild the model without a separate config file), then a manifest of named
// parameter tensors. All integers and the 64-bit float payload are
// little-endian; loading validates names and shapes and rejects mismatches.
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "dgnc/common.hpp"
#include "dgnc/config.hpp"
#include "dgnc/model.hpp"
#include "dgnc/tensor.hpp"

namespace dgnc {

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

class ByteReader {
 public:
  ByteReader(const std::string& data, const std::string& path) : data_(data), path_(path) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(byte()) << (8 * i);
    return v;
  }

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(byte()) << (8 * i);
    return v;
  }

  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool exhausted() const { return pos_ == data_.size(); }

 private:
  unsigned char byte() { return static_cast<unsigned char>(data_[pos_++]); }

  void need(std::size_t n) {
    if (pos_ + n > data_.size()) {
      throw CheckpointError("checkpoint " + path_ + ": truncated file");
    }
  }

  const std::string& data_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline constexpr char kCheckpointMagic[] = "DGNC1";

template <typename Real>
void save_checkpoint(const std::string& path, const Config& cfg,
                     const std::vector<std::pair<std::string, Tensor<Real>>>& params) {
  std::string out;
  out += kCheckpointMagic;
  const std::string echo = config_echo(cfg);
  detail::put_u32(out, static_cast<std::uint32_t>(echo.size()));
  out += echo;
  detail::put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put_u32(out, static_cast<std::uint32_t>(t.shape().size()));
    for (std::size_t d : t.shape()) detail::put_u64(out, d);
    for (Real v : t.values()) detail::put_f64(out, static_cast<double>(v));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) {
    throw CheckpointError("cannot write checkpoint " + path);
  }
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

struct LoadedCheckpoint {
  Config config;
  std::vector<std::pair<std::string, std::vector<std::size_t>>> shapes;
  std::vector<std::vector<double>> values;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) {
    throw CheckpointError("cannot open checkpoint " + path);
  }
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  detail::ByteReader r(data, path);
  if (r.bytes(5) != kCheckpointMagic) {
    throw CheckpointError("checkpoint " + path + ": bad magic (not a DGNC1 file)");
  }
  LoadedCheckpoint ck;
  const std::uint32_t cfg_len = r.u32();
  ck.config = parse_config_text(r.bytes(cfg_len));
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32();
    std::string name = r.bytes(name_len);
    const std::uint32_t rank = r.u32();
    std::vector<std::size_t> shape;
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape.push_back(static_cast<std::size_t>(r.u64()));
      numel *= shape.back();
    }
    std::vector<double> vals(numel);
    for (auto& v : vals) v = r.f64();
    ck.shapes.emplace_back(std::move(name), std::move(shape));
    ck.values.push_back(std::move(vals));
  }
  if (!r.exhausted()) {
    throw CheckpointError("checkpoint " + path + ": trailing bytes after manifest");
  }
  return ck;
}

// Rebuilds a model from the checkpoint's embedded config and fills every
// parameter tensor, rejecting name or shape mismatches.
template <typename Real>
ModelParams<Real> restore_model(const LoadedCheckpoint& ck, const std::string& path) {
  ModelParams<Real> params = ModelParams<Real>::init(ck.config, ck.config.regions);
  auto registry = params.named();
  if (registry.size() != ck.shapes.size()) {
    throw CheckpointError("checkpoint " + path + ": expected " + std::to_string(registry.size()) +
                          " tensors, found " + std::to_string(ck.shapes.size()));
  }
  for (std::size_t i = 0; i < registry.size(); ++i) {
    auto& [name, tensor] = registry[i];
    if (ck.shapes[i].first != name) {
      throw CheckpointError("checkpoint " + path + ": tensor " + std::to_string(i) + " named '" +
                            ck.shapes[i].first + "', expected '" + name + "'");
    }
    if (ck.shapes[i].second != tensor.shape()) {
      throw CheckpointError("checkpoint " + path + ": shape mismatch for '" + name + "': file " +
                            shape_str(ck.shapes[i].second) + " vs model " +
                            shape_str(tensor.shape()));
    }
    for (std::size_t j = 0; j < tensor.numel(); ++j) {
      tensor.values()[j] = static_cast<Real>(ck.values[i][j]);
    }
  }
  return params;
}

}  // namespace dgnc
