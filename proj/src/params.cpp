/*
 * Copyright (c) 2026, The ibimhav Authors.  All rights reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "ibimhav/params.hpp"

#include <cmath>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

namespace ibv {

Rng Rng::derive(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32), 0x1b1au};
  Rng r(0);
  r.eng_.seed(seq);
  return r;
}

double Rng::uniform(double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(eng_);
}

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
  return std::uniform_int_distribution<std::int64_t>(lo, hi)(eng_);
}

double Rng::normal(double mean, double stddev) { return mean + stddev * normal_(eng_); }

double Rng::truncated_normal(double stddev) {
  for (;;) {
    const double z = normal_(eng_);
    if (z >= -2.0 && z <= 2.0) return z * stddev;
  }
}

double fan_in_std(std::int64_t fan_in) {
  if (fan_in < 1) throw ConfigError("fan-in must be positive, got " + std::to_string(fan_in));
  return 1.0 / std::sqrt(static_cast<double>(fan_in));
}

template <typename T>
Var<T>& ParamStore<T>::create(const std::string& name, Shape shape, Init init, Rng& rng, double stddev) {
  if (contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  Tensor<T> t(std::move(shape));
  switch (init) {
    case Init::kTruncNormal:
      for (auto& e : t.data()) e = static_cast<T>(rng.truncated_normal(stddev));
      break;
    case Init::kOnes:
      t.fill(T(1));
      break;
    case Init::kZeros:
      break;
  }
  params_.push_back(Param<T>{name, Var<T>(std::move(t), true), true, init == Init::kTruncNormal});
  return params_.back().var;
}

template <typename T>
Var<T>& ParamStore<T>::get(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return p.var;
  }
  throw ConfigError("unknown parameter '" + name + "'");
}

template <typename T>
const Var<T>& ParamStore<T>::get(const std::string& name) const {
  return const_cast<ParamStore*>(this)->get(name);
}

template <typename T>
bool ParamStore<T>::contains(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return true;
  }
  return false;
}

template <typename T>
std::size_t ParamStore<T>::element_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.var.value().size();
  return n;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

template class ParamStore<float>;
template class ParamStore<double>;

namespace {

template <typename T>
void write_le(std::ofstream& os, const Tensor<T>& t) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(t.ptr()), static_cast<std::streamsize>(t.size() * sizeof(T)));
  } else {
    for (T v : t.data()) {
      unsigned char b[sizeof(T)];
      std::memcpy(b, &v, sizeof(T));
      for (std::size_t i = sizeof(T); i-- > 0;) os.put(static_cast<char>(b[i]));
    }
  }
}

template <typename T>
Tensor<T> read_le(const std::vector<char>& blob, std::size_t offset, const Shape& shape) {
  Tensor<T> t(shape);
  const std::size_t bytes = t.size() * sizeof(T);
  if (offset + bytes > blob.size()) {
    throw FormatError("tensor blob truncated: need bytes [" + std::to_string(offset) + "," +
                      std::to_string(offset + bytes) + ") of " + std::to_string(blob.size()));
  }
  std::memcpy(t.ptr(), blob.data() + offset, bytes);
  if constexpr (std::endian::native != std::endian::little) {
    for (auto& v : t.data()) {
      unsigned char b[sizeof(T)];
      std::memcpy(b, &v, sizeof(T));
      std::reverse(b, b + sizeof(T));
      std::memcpy(&v, b, sizeof(T));
    }
  }
  return t;
}

}  // namespace

void save_tensors(const std::filesystem::path& dir, const std::vector<NamedTensor>& tensors,
                  const nlohmann::json& meta) {
  std::filesystem::create_directories(dir);
  std::ofstream blob(dir / "params.bin", std::ios::binary | std::ios::trunc);
  if (!blob) throw FormatError("cannot write " + (dir / "params.bin").string());
  nlohmann::json entries = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& nt : tensors) {
    const Shape& shape = nt.is_f64 ? nt.f64.shape() : nt.f32.shape();
    const std::size_t bytes = nt.is_f64 ? nt.f64.size() * 8 : nt.f32.size() * 4;
    if (nt.is_f64) {
      write_le(blob, nt.f64);
    } else {
      write_le(blob, nt.f32);
    }
    entries.push_back({{"name", nt.name},
                       {"shape", shape},
                       {"dtype", nt.is_f64 ? "f64" : "f32"},
                       {"offset", offset},
                       {"bytes", bytes}});
    offset += bytes;
  }
  nlohmann::json manifest{{"format", "ibimhav-tensors-1"}, {"blob", "params.bin"}, {"tensors", entries}, {"meta", meta}};
  std::ofstream mf(dir / "manifest.json", std::ios::trunc);
  if (!mf) throw FormatError("cannot write " + (dir / "manifest.json").string());
  mf << manifest.dump(2) << '\n';
}

std::vector<NamedTensor> load_tensors(const std::filesystem::path& dir, nlohmann::json* meta) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw FormatError("missing checkpoint manifest " + (dir / "manifest.json").string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(mf);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed manifest " + (dir / "manifest.json").string() + ": " + e.what());
  }
  if (manifest.value("format", "") != "ibimhav-tensors-1") {
    throw FormatError("unsupported manifest format in " + (dir / "manifest.json").string());
  }
  const auto blob_path = dir / manifest.value("blob", "params.bin");
  std::ifstream bf(blob_path, std::ios::binary);
  if (!bf) throw FormatError("missing tensor blob " + blob_path.string());
  std::vector<char> blob((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());
  std::vector<NamedTensor> out;
  try {
    for (const auto& e : manifest.at("tensors")) {
      NamedTensor nt;
      nt.name = e.at("name").get<std::string>();
      const Shape shape = e.at("shape").get<Shape>();
      const std::string dtype = e.at("dtype").get<std::string>();
      const std::size_t offset = e.at("offset").get<std::size_t>();
      if (dtype == "f32") {
        nt.f32 = read_le<float>(blob, offset, shape);
      } else if (dtype == "f64") {
        nt.is_f64 = true;
        nt.f64 = read_le<double>(blob, offset, shape);
      } else {
        throw FormatError("tensor '" + nt.name + "' has unsupported dtype " + dtype);
      }
      out.push_back(std::move(nt));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed manifest entry: " + std::string(e.what()));
  }
  if (meta) *meta = manifest.value("meta", nlohmann::json::object());
  return out;
}

}  // namespace ibv
