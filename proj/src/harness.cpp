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

#include "ibimhav/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <map>
#include <thread>

#include "ibimhav/errors.hpp"
#include "ibimhav/postprocess.hpp"

namespace ibv {

using Vec3 = std::array<double, 3>;

void PhantomSpec::validate() const {
  for (auto e : extents) {
    if (e < 4) throw ConfigError("phantom extents must be at least 4 per axis, got " + grid_str(extents));
  }
  for (double s : spacing) {
    if (!(s > 0)) throw ConfigError("phantom spacing must be positive");
  }
  if (tubes < 0) throw ConfigError("phantom tube count must be non-negative");
  if (radius_min < 1.0 || radius_max < radius_min) throw ConfigError("phantom radii need 1 <= radius_min <= radius_max");
  if (noise_sigma < 0) throw ConfigError("phantom noise sigma must be non-negative");
}

void render_tube(Volume& mask, const Vec3& a, const Vec3& b, double ra, double rb) {
  const Grid3 e = mask.extents();
  const double rmax = std::max(ra, rb);
  Grid3 lo, hi;
  for (int k = 0; k < 3; ++k) {
    lo[k] = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(std::min(a[k], b[k]) - rmax)));
    hi[k] = std::min<std::int64_t>(e[k] - 1, static_cast<std::int64_t>(std::ceil(std::max(a[k], b[k]) + rmax)));
  }
  const Vec3 ab{b[0] - a[0], b[1] - a[1], b[2] - a[2]};
  const double len2 = ab[0] * ab[0] + ab[1] * ab[1] + ab[2] * ab[2];
  for (std::int64_t x = lo[0]; x <= hi[0]; ++x)
    for (std::int64_t y = lo[1]; y <= hi[1]; ++y)
      for (std::int64_t z = lo[2]; z <= hi[2]; ++z) {
        const Vec3 ap{x - a[0], y - a[1], z - a[2]};
        double t = len2 > 0 ? (ap[0] * ab[0] + ap[1] * ab[1] + ap[2] * ab[2]) / len2 : 0.0;
        t = std::clamp(t, 0.0, 1.0);
        double d2 = 0;
        for (int k = 0; k < 3; ++k) {
          const double diff = ap[k] - t * ab[k];
          d2 += diff * diff;
        }
        const double r = ra + t * (rb - ra);
        if (d2 <= r * r) mask.at(x, y, z) = 1.0f;
      }
}

namespace {

Vec3 unit(const Vec3& v) {
  const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  return n > 0 ? Vec3{v[0] / n, v[1] / n, v[2] / n} : Vec3{1, 0, 0};
}

Vec3 random_dir(Rng& rng) { return unit({rng.normal(), rng.normal(), rng.normal()}); }

// Piecewise-linear path with tapering radius; returns the vertices.
std::vector<Vec3> sweep_path(Volume& mask, Vec3 p, Vec3 dir, int segments, double step, double r0, double r1,
                             Rng& rng) {
  std::vector<Vec3> pts{p};
  for (int s = 0; s < segments; ++s) {
    const Vec3 jitter = random_dir(rng);
    dir = unit({dir[0] + 0.6 * jitter[0], dir[1] + 0.6 * jitter[1], dir[2] + 0.6 * jitter[2]});
    const double len = step * rng.uniform(0.8, 1.2);
    const Vec3 q{p[0] + len * dir[0], p[1] + len * dir[1], p[2] + len * dir[2]};
    const double ra = r0 + (r1 - r0) * s / segments, rb = r0 + (r1 - r0) * (s + 1) / segments;
    render_tube(mask, p, q, ra, rb);
    pts.push_back(q);
    p = q;
  }
  return pts;
}

}  // namespace

CaseRecord generate_phantom(const PhantomSpec& spec, const std::string& case_id) {
  spec.validate();
  Rng rng(spec.seed);
  const Grid3 e = spec.extents;
  CaseRecord c;
  c.case_id = case_id;
  c.image = Volume(e, spec.spacing, VolumeKind::kScalar, static_cast<float>(spec.background_hu));
  c.liver = Volume(e, spec.spacing, VolumeKind::kMask);
  c.vessel = Volume(e, spec.spacing, VolumeKind::kMask);
  const Vec3 centre{e[0] / 2.0, e[1] / 2.0, e[2] / 2.0};
  const Vec3 semi{0.42 * e[0], 0.42 * e[1], 0.42 * e[2]};
  for (std::int64_t x = 0; x < e[0]; ++x)
    for (std::int64_t y = 0; y < e[1]; ++y)
      for (std::int64_t z = 0; z < e[2]; ++z) {
        const double u = (x - centre[0]) / semi[0], v = (y - centre[1]) / semi[1], w = (z - centre[2]) / semi[2];
        if (u * u + v * v + w * w <= 1.0) c.liver.at(x, y, z) = 1.0f;
      }
  if (spec.layout == PhantomLayout::kStraight) {
    const double gap = 2 * spec.radius_max + 3;
    for (int t = 0; t < spec.tubes; ++t) {
      const double off = (t % 2 == 0 ? 1.0 : -1.0) * gap * ((t + 1) / 2);
      const Vec3 a{0.0, centre[1] + off, centre[2]}, b{static_cast<double>(e[0] - 1), centre[1] + off, centre[2]};
      render_tube(c.vessel, a, b, spec.radius_min, spec.radius_min);
    }
  } else {
    const double step = 0.25 * static_cast<double>(std::min({e[0], e[1], e[2]}));
    for (int t = 0; t < spec.tubes; ++t) {
      Vec3 start;
      for (int k = 0; k < 3; ++k) start[k] = centre[k] + rng.uniform(-0.6, 0.6) * semi[k];
      const Vec3 dir = random_dir(rng);
      auto trunk = sweep_path(c.vessel, start, dir, 3, step, spec.radius_max, spec.radius_min, rng);
      // Reverse extension so the trunk crosses the volume.
      sweep_path(c.vessel, start, {-dir[0], -dir[1], -dir[2]}, 2, step, spec.radius_max, spec.radius_min, rng);
      const double rb = std::max(spec.radius_min, 0.8 * 0.5 * (spec.radius_max + spec.radius_min));
      sweep_path(c.vessel, trunk[1], random_dir(rng), 2, 0.8 * step, rb, spec.radius_min, rng);
    }
  }
  const float vessel_hu = static_cast<float>(spec.liver_hu + spec.contrast_hu);
  for (std::int64_t i = 0; i < c.image.voxels(); ++i) {
    float v = c.image.data[i];
    if (c.liver.data[i] != 0.0f) v = static_cast<float>(spec.liver_hu);
    if (c.vessel.data[i] != 0.0f) v = vessel_hu;
    if (spec.noise_sigma > 0) v += static_cast<float>(rng.normal(0.0, spec.noise_sigma));
    c.image.data[i] = v;
  }
  return c;
}

void TrainConfig::validate() const {
  if (!(lr >= 0) || !std::isfinite(lr)) throw ConfigError("train.lr must be a finite non-negative number");
  if (momentum < 0 || momentum >= 1) throw ConfigError("train.momentum must lie in [0, 1)");
  if (weight_decay < 0) throw ConfigError("train.weight_decay must be non-negative");
  if (batch < 1) throw ConfigError("train.batch must be >= 1");
  if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
  if (steps_per_epoch < 0) throw ConfigError("train.steps_per_epoch must be >= 0");
  if (beta < 0) throw ConfigError("train.beta must be non-negative");
  if (!(clip_norm >= 0)) throw ConfigError("train.clip_norm must be non-negative");
  for (auto c : crop) {
    if (c < 1) throw ConfigError("train.crop extents must be positive");
  }
}

Trainer::Trainer(Network<float>& net, std::vector<PreparedCase> cases, TrainConfig cfg)
    : net_(net), cases_(std::move(cases)), cfg_(std::move(cfg)) {
  cfg_.validate();
  if (cases_.empty()) throw ConfigError("training needs at least one case");
  if (cfg_.crop != net_.config().patch) {
    throw ConfigError("train.crop " + grid_str(cfg_.crop) + " must equal model.patch " + grid_str(net_.config().patch));
  }
  for (const auto& c : cases_) {
    for (int a = 0; a < 3; ++a) {
      if (c.image.extents()[a] < cfg_.crop[a]) {
        throw DimensionError("case " + c.case_id + " extents " + grid_str(c.image.extents()) + " smaller than crop " +
                             grid_str(cfg_.crop));
      }
    }
    if (c.label.extents() != c.image.extents()) throw DimensionError("case " + c.case_id + " label extents differ");
  }
  for (const auto& p : net_.params().params()) state_.momentum.emplace_back(p.var.shape());
}

std::int64_t Trainer::steps_per_epoch() const {
  if (cfg_.steps_per_epoch > 0) return cfg_.steps_per_epoch;
  const auto n = static_cast<std::int64_t>(cases_.size());
  return (n + cfg_.batch - 1) / cfg_.batch;
}

std::int64_t Trainer::total_steps() const { return steps_per_epoch() * cfg_.epochs; }

namespace {

Volume crop_at(const Volume& v, const Grid3& origin, const Grid3& size) {
  Box b;
  for (int a = 0; a < 3; ++a) {
    b.lo[a] = origin[a];
    b.hi[a] = origin[a] + size[a] - 1;
  }
  return crop(v, b);
}

}  // namespace

double Trainer::step_once() {
  const std::int64_t s = state_.step;
  Rng rng = Rng::derive(cfg_.seed, static_cast<std::uint64_t>(s));
  auto& params = net_.params();
  params.zero_grad();
  const auto n = static_cast<std::int64_t>(cases_.size());
  double loss_sum = 0;
  for (int b = 0; b < cfg_.batch; ++b) {
    const PreparedCase& c = cases_[static_cast<std::size_t>((s * cfg_.batch + b) % n)];
    const Grid3 e = c.image.extents();
    Grid3 origin;
    for (int a = 0; a < 3; ++a) origin[a] = rng.uniform_int(0, e[a] - cfg_.crop[a]);
    Volume img = crop_at(c.image, origin, cfg_.crop);
    Volume lab = crop_at(c.label, origin, cfg_.crop);
    if (cfg_.augment) {
      const AugmentSpec aug = random_augment(rng, std::min<std::int64_t>(25, cfg_.crop[0] / 4));
      img = augment_volume(img, aug);
      lab = augment_volume(lab, aug);
    }
    Var<float> loss = weighted_dice_loss(net_.foreground(img.data), lab.data, static_cast<float>(cfg_.beta),
                                         static_cast<float>(cfg_.eps));
    const float l = loss.value()[0];
    if (!std::isfinite(l)) {
      throw NumericalError("non-finite loss at step " + std::to_string(s) + " (lr " + std::to_string(cfg_.lr) +
                           ", previous grad norm " + std::to_string(state_.last_grad_norm) + ")");
    }
    loss_sum += l;
    scale(loss, 1.0f / static_cast<float>(cfg_.batch)).backward();
  }
  double gnorm2 = 0;
  for (const auto& p : params.params()) {
    if (!p.var.has_grad()) continue;
    for (float g : p.var.grad().data()) gnorm2 += static_cast<double>(g) * g;
  }
  if (!std::isfinite(gnorm2)) {
    throw NumericalError("non-finite gradient at step " + std::to_string(s) + " (lr " + std::to_string(cfg_.lr) +
                         ", loss " + std::to_string(loss_sum / cfg_.batch) + ", grad norm " + std::to_string(std::sqrt(gnorm2)) + ")");
  }
  const double gnorm = std::sqrt(gnorm2);
  state_.last_grad_norm = gnorm;
  const float gscale =
      cfg_.clip_norm > 0 && gnorm > cfg_.clip_norm ? static_cast<float>(cfg_.clip_norm / gnorm) : 1.0f;
  const float lr = static_cast<float>(cfg_.lr), mu = static_cast<float>(cfg_.momentum),
              wd = static_cast<float>(cfg_.weight_decay);
  auto& list = params.params();
  for (std::size_t i = 0; i < list.size(); ++i) {
    auto& p = list[i];
    if (!p.trainable || !p.var.has_grad()) continue;
    auto w = p.var.mutable_value().data();
    auto g = p.var.grad().data();
    auto v = state_.momentum[i].data();
    const float decay = p.decay ? wd : 0.0f;
    for (std::size_t k = 0; k < w.size(); ++k) {
      v[k] = mu * v[k] + gscale * g[k];
      const float w0 = w[k];
      w[k] = w0 - lr * v[k] - lr * decay * w0;
    }
  }
  return loss_sum / cfg_.batch;
}

std::vector<StepRecord> Trainer::run(std::int64_t until_step) {
  std::vector<StepRecord> out;
  const std::int64_t end = std::min(until_step, total_steps());
  while (state_.step < end) {
    const double l = step_once();
    StepRecord r{state_.step, l};
    state_.history.push_back(r);
    out.push_back(r);
    ++state_.step;
  }
  return out;
}

TrainResult Trainer::run_all() {
  run(total_steps());
  TrainResult r;
  r.steps = state_.history;
  r.epoch_loss = epoch_losses();
  return r;
}

std::vector<double> Trainer::epoch_losses() const {
  const std::int64_t spe = steps_per_epoch();
  std::map<std::int64_t, std::pair<double, std::int64_t>> acc;
  for (const auto& r : state_.history) {
    auto& a = acc[r.step / spe];
    a.first += r.loss;
    ++a.second;
  }
  std::vector<double> out;
  for (const auto& [epoch, a] : acc) {
    if (a.second == spe) out.push_back(a.first / static_cast<double>(spe));
  }
  return out;
}

void Trainer::save_checkpoint(const std::filesystem::path& dir, const nlohmann::json& extra) const {
  std::vector<NamedTensor> tensors;
  const auto& list = net_.params().params();
  for (std::size_t i = 0; i < list.size(); ++i) {
    NamedTensor p;
    p.name = "param/" + list[i].name;
    p.f32 = list[i].var.value();
    tensors.push_back(std::move(p));
  }
  for (std::size_t i = 0; i < list.size(); ++i) {
    NamedTensor m;
    m.name = "momentum/" + list[i].name;
    m.f32 = state_.momentum[i];
    tensors.push_back(std::move(m));
  }
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& r : state_.history) hist.push_back({r.step, r.loss});
  nlohmann::json meta = {{"step", state_.step}, {"history", hist}};
  if (!extra.is_null()) meta["extra"] = extra;
  save_tensors(dir, tensors, meta);
}

void Trainer::load_checkpoint(const std::filesystem::path& dir) {
  nlohmann::json meta;
  auto tensors = load_tensors(dir, &meta);
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t;
  auto& list = net_.params().params();
  auto fetch = [&](const std::string& name, const Shape& shape) -> const Tensor<float>& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("checkpoint " + dir.string() + " lacks tensor '" + name + "'");
    if (it->second->is_f64 || it->second->f32.shape() != shape) {
      throw FormatError("checkpoint tensor '" + name + "' has shape " + shape_str(it->second->f32.shape()) +
                        ", model expects " + shape_str(shape));
    }
    return it->second->f32;
  };
  for (std::size_t i = 0; i < list.size(); ++i) {
    list[i].var.mutable_value() = fetch("param/" + list[i].name, list[i].var.shape());
    state_.momentum[i] = fetch("momentum/" + list[i].name, list[i].var.shape());
  }
  try {
    state_.step = meta.at("step").get<std::int64_t>();
    state_.history.clear();
    for (const auto& r : meta.at("history")) state_.history.push_back({r.at(0).get<std::int64_t>(), r.at(1).get<double>()});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint " + dir.string() + " has malformed metadata: " + e.what());
  }
}

nlohmann::json load_model_params(Network<float>& net, const std::filesystem::path& dir) {
  nlohmann::json meta;
  auto tensors = load_tensors(dir, &meta);
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t;
  for (auto& p : net.params().params()) {
    auto it = by_name.find("param/" + p.name);
    if (it == by_name.end()) throw FormatError("checkpoint " + dir.string() + " lacks parameter '" + p.name + "'");
    if (it->second->is_f64 || it->second->f32.shape() != p.var.shape()) {
      throw FormatError("checkpoint parameter '" + p.name + "' has shape " + shape_str(it->second->f32.shape()) +
                        ", model expects " + shape_str(p.var.shape()));
    }
    p.var.mutable_value() = it->second->f32;
  }
  return meta;
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<StepRecord>& steps) {
  std::ofstream f(path);
  if (!f) throw FormatError("cannot write loss curve '" + path.string() + "'");
  f << "step,loss\n";
  char buf[64];
  for (const auto& r : steps) {
    std::snprintf(buf, sizeof buf, "%lld,%.9g\n", static_cast<long long>(r.step), r.loss);
    f << buf;
  }
}

Volume infer_sliding(const Network<float>& net, const Volume& image, std::int64_t stride, int threads) {
  const Grid3 patch = net.config().patch;
  const Grid3 e = image.extents();
  const auto origins = sliding_window_grid(e, patch, stride);
  const std::int64_t n = image.voxels();
  std::vector<double> sum0(static_cast<std::size_t>(n), 0.0), sum1(static_cast<std::size_t>(n), 0.0);
  std::vector<int> count(static_cast<std::size_t>(n), 0);
  const std::size_t chunk = static_cast<std::size_t>(std::max(1, threads));
  std::vector<Tensor<float>> logits(chunk);
  for (std::size_t begin = 0; begin < origins.size(); begin += chunk) {
    const std::size_t end = std::min(origins.size(), begin + chunk);
    auto work = [&](std::size_t i) {
      NoGradGuard ng;
      Volume p = crop_at(image, origins[i], patch);
      logits[i - begin] = net.logits(p.data).value();
    };
    if (chunk == 1) {
      work(begin);
    } else {
      std::vector<std::thread> pool;
      std::atomic<std::size_t> next{begin};
      for (std::size_t t = 0; t < chunk; ++t) {
        pool.emplace_back([&] {
          for (std::size_t i = next++; i < end; i = next++) work(i);
        });
      }
      for (auto& th : pool) th.join();
    }
    // Accumulate in origin order so the result is independent of scheduling.
    for (std::size_t i = begin; i < end; ++i) {
      const Grid3& o = origins[i];
      const Tensor<float>& l = logits[i - begin];
      std::int64_t k = 0;
      for (std::int64_t x = 0; x < patch[0]; ++x)
        for (std::int64_t y = 0; y < patch[1]; ++y)
          for (std::int64_t z = 0; z < patch[2]; ++z, ++k) {
            const std::int64_t v = image.index(o[0] + x, o[1] + y, o[2] + z);
            sum0[v] += l[2 * k];
            sum1[v] += l[2 * k + 1];
            ++count[v];
          }
    }
  }
  Volume out(e, image.spacing);
  for (std::int64_t v = 0; v < n; ++v) {
    const double a = sum0[v] / count[v], b = sum1[v] / count[v];
    const double m = std::max(a, b);
    const double ea = std::exp(a - m), eb = std::exp(b - m);
    out.data[v] = static_cast<float>(eb / (ea + eb));
  }
  return out;
}

void EvalConfig::validate() const {
  if (!(threshold >= 0 && threshold <= 1)) throw ConfigError("eval.threshold must lie in [0, 1]");
  if (min_component_mm3 < 0) throw ConfigError("eval.min_component_mm3 must be non-negative");
  if (connectivity != 6 && connectivity != 26) throw ConfigError("eval.connectivity must be 6 or 26");
  if (close_radius < 0) throw ConfigError("eval.close_radius must be non-negative");
}

Volume threshold_volume(const Volume& prob, double threshold) {
  Volume out(prob.extents(), prob.spacing, VolumeKind::kMask);
  for (std::size_t i = 0; i < prob.data.size(); ++i) out.data[i] = prob.data[i] >= threshold ? 1.0f : 0.0f;
  return out;
}

nlohmann::json evaluate_case(const std::string& case_id, const Volume& prob, const Volume& truth, const EvalConfig& cfg) {
  cfg.validate();
  if (prob.extents() != truth.extents()) {
    throw DimensionError("prediction extents " + grid_str(prob.extents()) + " differ from truth extents " +
                         grid_str(truth.extents()));
  }
  Volume mask = threshold_volume(prob, cfg.threshold);
  if (cfg.min_component_mm3 > 0) mask = remove_small_components(mask, cfg.min_component_mm3, cfg.connectivity);
  if (cfg.close_radius > 0) mask = morph_close(mask, cfg.close_radius);
  return metrics_row(case_id, metrics(confusion(mask, truth)));
}

}  // namespace ibv
