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

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace fedbag {

// Named random streams.
//
// Every consumer of randomness (dropout, shuffling, privacy noise, synthetic
// data) draws from a stream whose key is a pure function of the master seed
// and a tuple of identifiers such as (purpose, site, round, tensor name).
// Streams are therefore independent of evaluation order and thread placement:
// two runs that request the same key see the same numbers.

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t hash_name(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

class StreamKey {
 public:
  explicit constexpr StreamKey(std::uint64_t seed) : state_(splitmix64(seed)) {}

  constexpr StreamKey with(std::uint64_t id) const {
    StreamKey k = *this;
    k.state_ = splitmix64(k.state_ ^ splitmix64(id + 0x632be59bd9b4e019ULL));
    return k;
  }
  constexpr StreamKey with(std::string_view name) const { return with(hash_name(name)); }

  constexpr std::uint64_t value() const { return state_; }

 private:
  std::uint64_t state_;
};

using Engine = std::mt19937_64;

inline Engine make_engine(const StreamKey& key) {
  std::seed_seq seq{static_cast<std::uint32_t>(key.value()),
                    static_cast<std::uint32_t>(key.value() >> 32)};
  return Engine(seq);
}

/// Convenience: engine for seed followed by a list of textual/numeric ids.
inline Engine make_engine(std::uint64_t seed, std::string_view purpose,
                          std::initializer_list<std::uint64_t> ids = {}) {
  StreamKey k = StreamKey(seed).with(purpose);
  for (auto id : ids) k = k.with(id);
  return make_engine(k);
}

}  // namespace fedbag
