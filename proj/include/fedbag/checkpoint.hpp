// Copyright 2026 The fedbag Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Checkpoint container.
//
//   "FBAG" | u32 version | u32 tensor count
//   per tensor: u32 name length | name bytes | u32 rank | rank × u64 dims | payload
//
// Version 1 stores payloads as little-endian f32, version 2 as f64. Weights
// are written in canonical tensor order; optional optimizer state follows as
// "<name>.m" / "<name>.v" tensors and a rank-0 tensor "adam.t".

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "fedbag/binary_io.hpp"
#include "fedbag/model.hpp"
#include "fedbag/optim.hpp"

namespace fedbag {

inline constexpr char kCheckpointMagic[4] = {'F', 'B', 'A', 'G'};
inline constexpr std::uint32_t kCheckpointF32 = 1;
inline constexpr std::uint32_t kCheckpointF64 = 2;

template <typename T>
struct Checkpoint {
  ModelWeights<T> weights;
  std::optional<AdamState<T>> optimizer;
};

namespace detail {

struct RawTensor {
  std::vector<std::uint64_t> dims;
  std::vector<double> values;
};

template <typename T, typename Tensor>
void write_tensor(std::ostream& os, std::string_view name, const Tensor& t, bool is_vector) {
  io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  if (is_vector) {
    io::put_le<std::uint32_t>(os, 1);
    io::put_le<std::uint64_t>(os, static_cast<std::uint64_t>(t.size()));
  } else {
    io::put_le<std::uint32_t>(os, 2);
    io::put_le<std::uint64_t>(os, static_cast<std::uint64_t>(t.rows()));
    io::put_le<std::uint64_t>(os, static_cast<std::uint64_t>(t.cols()));
  }
  for (Eigen::Index i = 0; i < t.size(); ++i) io::put_le<T>(os, t.data()[i]);
}

template <typename Tensor>
void fill_tensor(Tensor& t, const RawTensor& raw, const std::string& name, const std::string& path) {
  constexpr bool is_vector = Tensor::ColsAtCompileTime == 1;
  if (is_vector) {
    if (raw.dims.size() != 1) throw FormatError("tensor " + name + " should be rank 1 in " + path);
    t.resize(static_cast<Eigen::Index>(raw.dims[0]), 1);
  } else {
    if (raw.dims.size() != 2) throw FormatError("tensor " + name + " should be rank 2 in " + path);
    t.resize(static_cast<Eigen::Index>(raw.dims[0]), static_cast<Eigen::Index>(raw.dims[1]));
  }
  using S = typename Tensor::Scalar;
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<S>(raw.values[static_cast<std::size_t>(i)]);
}

}  // namespace detail

/// float weights are stored as version 1 (f32); double as version 2 (f64).
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ModelWeights<T>& w,
                     const AdamState<T>* opt = nullptr) {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  auto os = io::open_out(path);
  os.write(kCheckpointMagic, 4);
  io::put_le<std::uint32_t>(os, std::is_same_v<T, float> ? kCheckpointF32 : kCheckpointF64);
  io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(kTensorNames.size() * (opt ? 3 : 1) + (opt ? 1 : 0)));
  auto dump = [&](const ModelWeights<T>& src, std::string_view suffix) {
    ModelWeights<T>::for_each_member([&](std::string_view name, auto mp) {
      const auto& t = src.*mp;
      constexpr bool is_vec = std::remove_reference_t<decltype(t)>::ColsAtCompileTime == 1;
      detail::write_tensor<T>(os, std::string(name) + std::string(suffix), t, is_vec);
    });
  };
  dump(w, "");
  if (opt) {
    dump(opt->m, ".m");
    dump(opt->v, ".v");
    const std::string tname = "adam.t";
    io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(tname.size()));
    os.write(tname.data(), static_cast<std::streamsize>(tname.size()));
    io::put_le<std::uint32_t>(os, 0);
    io::put_le<T>(os, static_cast<T>(opt->t));
  }
  if (!os) throw Error("save_checkpoint: write failed: " + path.string());
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path, const AdamConfig& adam_config = {}) {
  auto is = io::open_in(path);
  const std::string p = path.string();
  char magic[4];
  if (!is.read(magic, 4) || !std::equal(magic, magic + 4, kCheckpointMagic))
    throw FormatError("bad checkpoint magic in " + p);
  std::uint32_t version = 0, count = 0;
  if (!io::get_le(is, version) || !io::get_le(is, count)) throw FormatError("truncated checkpoint header in " + p);
  if (version != kCheckpointF32 && version != kCheckpointF64)
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " in " + p);

  std::map<std::string, detail::RawTensor> tensors;
  for (std::uint32_t k = 0; k < count; ++k) {
    std::uint32_t len = 0, rank = 0;
    if (!io::get_le(is, len) || len > 4096) throw FormatError("truncated tensor name in " + p);
    std::string name(len, '\0');
    if (!is.read(name.data(), len) || !io::get_le(is, rank) || rank > 8)
      throw FormatError("truncated tensor header in " + p);
    detail::RawTensor raw;
    std::uint64_t n = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      std::uint64_t d = 0;
      if (!io::get_le(is, d)) throw FormatError("truncated tensor dims in " + p);
      raw.dims.push_back(d);
      n *= d;
    }
    if (n > (std::uint64_t{1} << 34)) throw FormatError("implausible tensor size in " + p);
    raw.values.resize(static_cast<std::size_t>(n));
    for (auto& v : raw.values) {
      bool ok;
      if (version == kCheckpointF32) {
        float f;
        ok = io::get_le(is, f);
        v = f;
      } else {
        ok = io::get_le(is, v);
      }
      if (!ok) throw FormatError("truncated tensor payload for " + name + " in " + p);
    }
    tensors.emplace(std::move(name), std::move(raw));
  }

  Checkpoint<T> ck;
  auto restore = [&](ModelWeights<T>& dst, const std::string& suffix) {
    ModelWeights<T>::for_each_member([&](std::string_view name, auto mp) {
      const std::string key = std::string(name) + suffix;
      auto it = tensors.find(key);
      if (it == tensors.end()) throw FormatError("checkpoint " + p + " lacks tensor " + key);
      detail::fill_tensor(dst.*mp, it->second, key, p);
    });
  };
  restore(ck.weights, "");
  if (!ck.weights.all_finite()) throw NonFiniteError("checkpoint " + p + " contains non-finite weights");
  if (tensors.count("adam.t")) {
    AdamState<T> st;
    st.config = adam_config;
    restore(st.m, ".m");
    restore(st.v, ".v");
    st.t = static_cast<std::int64_t>(tensors.at("adam.t").values.at(0));
    ck.optimizer = std::move(st);
  }
  return ck;
}

}  // namespace fedbag
