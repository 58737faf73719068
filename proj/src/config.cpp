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

#include "ibimhav/config.hpp"

#include <fstream>
#include <sstream>

#include "ibimhav/errors.hpp"

namespace ibv {

using nlohmann::json;

void RunConfig::validate() const {
  model.validate();
  train.validate();
  phantom.validate();
  eval.validate();
  for (auto t : preprocess.target) {
    if (t < 1) throw ConfigError("preprocess.target extents must be positive");
  }
  if (!(preprocess.hu_lo < preprocess.hu_hi)) throw ConfigError("preprocess.hu_lo must be below preprocess.hu_hi");
  if (infer.stride < 1) throw ConfigError("infer.stride must be positive");
  if (threads < 1) throw ConfigError("threads must be >= 1");
}

json to_json(const RunConfig& c) {
  const ModelConfig& m = c.model;
  const TrainConfig& t = c.train;
  const PhantomSpec& p = c.phantom;
  return json{
      {"seed", c.seed},
      {"threads", c.threads},
      {"model",
       {{"patch", m.patch},
        {"embed_dim", m.embed_dim},
        {"heads", m.heads},
        {"blocks", m.blocks},
        {"levels", m.levels},
        {"window", m.window.window},
        {"downsample", to_string(m.downsample)},
        {"upsample", to_string(m.upsample)},
        {"position", to_string(m.position)},
        {"add_absolute", m.add_absolute},
        {"local_path", m.local_path},
        {"local_channels", m.local_channels},
        {"local_kernel", m.local_kernel},
        {"embed_kernel", m.embed_kernel},
        {"mlp_ratio", m.mlp_ratio},
        {"num_classes", m.num_classes}}},
      {"train",
       {{"lr", t.lr},
        {"momentum", t.momentum},
        {"weight_decay", t.weight_decay},
        {"batch", t.batch},
        {"epochs", t.epochs},
        {"steps_per_epoch", t.steps_per_epoch},
        {"beta", t.beta},
        {"eps", t.eps},
        {"clip_norm", t.clip_norm},
        {"crop", t.crop},
        {"augment", t.augment},
        {"seed", t.seed}}},
      {"phantom",
       {{"extents", p.extents},
        {"spacing", p.spacing},
        {"tubes", p.tubes},
        {"radius_min", p.radius_min},
        {"radius_max", p.radius_max},
        {"background_hu", p.background_hu},
        {"liver_hu", p.liver_hu},
        {"contrast_hu", p.contrast_hu},
        {"noise_sigma", p.noise_sigma},
        {"layout", p.layout == PhantomLayout::kStraight ? "straight" : "branching"},
        {"seed", p.seed}}},
      {"preprocess", {{"target", c.preprocess.target}, {"hu_lo", c.preprocess.hu_lo}, {"hu_hi", c.preprocess.hu_hi}}},
      {"infer", {{"stride", c.infer.stride}}},
      {"eval",
       {{"threshold", c.eval.threshold},
        {"min_component_mm3", c.eval.min_component_mm3},
        {"connectivity", c.eval.connectivity},
        {"close_radius", c.eval.close_radius}}},
  };
}

namespace {

bool same_kind(const json& schema, const json& v) {
  if (schema.is_boolean()) return v.is_boolean();
  if (schema.is_number_integer()) return v.is_number_integer();
  if (schema.is_number()) return v.is_number();
  if (schema.is_string()) return v.is_string();
  if (schema.is_array()) {
    if (!v.is_array() || v.empty()) return false;
    for (const auto& e : v) {
      if (!same_kind(schema.front(), e)) return false;
    }
    return true;
  }
  return schema.type() == v.type();
}

void merge(json& base, const json& doc, const std::string& prefix) {
  if (!doc.is_object()) throw ConfigError("config section '" + (prefix.empty() ? "<root>" : prefix) + "' must be an object");
  for (const auto& [key, value] : doc.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    json& slot = base[key];
    if (slot.is_object()) {
      merge(slot, value, path);
    } else {
      if (!same_kind(slot, value)) {
        throw ConfigError("config key '" + path + "' expects " + std::string(slot.type_name()) + " like " + slot.dump() +
                          ", got " + value.dump());
      }
      slot = value;
    }
  }
}

template <typename T>
T field(const json& doc, const std::string& section, const std::string& key) {
  try {
    return (section.empty() ? doc.at(key) : doc.at(section).at(key)).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config key '" + (section.empty() ? key : section + "." + key) + "': " + e.what());
  }
}

Grid3 grid(const json& doc, const std::string& section, const std::string& key) {
  auto v = field<std::vector<std::int64_t>>(doc, section, key);
  if (v.size() != 3) throw ConfigError("config key '" + section + "." + key + "' needs 3 entries");
  return {v[0], v[1], v[2]};
}

template <typename F>
auto parse_enum(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

}  // namespace

RunConfig run_config_from_json(const json& doc) {
  json full = to_json(RunConfig{});
  merge(full, doc, "");
  RunConfig c;
  c.seed = field<std::uint64_t>(full, "", "seed");
  c.threads = field<int>(full, "", "threads");

  ModelConfig& m = c.model;
  m.patch = grid(full, "model", "patch");
  m.embed_dim = field<std::int64_t>(full, "model", "embed_dim");
  m.heads = field<std::vector<int>>(full, "model", "heads");
  m.blocks = field<int>(full, "model", "blocks");
  m.levels = field<int>(full, "model", "levels");
  m.window.window = grid(full, "model", "window");
  m.downsample = parse_enum("model.downsample", [&] {
    return downsample_mode_from_string(field<std::string>(full, "model", "downsample"));
  });
  m.upsample =
      parse_enum("model.upsample", [&] { return upsample_mode_from_string(field<std::string>(full, "model", "upsample")); });
  m.position = parse_enum("model.position",
                          [&] { return position_mode_from_string(field<std::string>(full, "model", "position")); });
  m.add_absolute = field<bool>(full, "model", "add_absolute");
  m.local_path = field<bool>(full, "model", "local_path");
  m.local_channels = field<std::int64_t>(full, "model", "local_channels");
  m.local_kernel = field<int>(full, "model", "local_kernel");
  m.embed_kernel = field<int>(full, "model", "embed_kernel");
  m.mlp_ratio = field<int>(full, "model", "mlp_ratio");
  m.num_classes = field<int>(full, "model", "num_classes");

  TrainConfig& t = c.train;
  t.lr = field<double>(full, "train", "lr");
  t.momentum = field<double>(full, "train", "momentum");
  t.weight_decay = field<double>(full, "train", "weight_decay");
  t.batch = field<int>(full, "train", "batch");
  t.epochs = field<int>(full, "train", "epochs");
  t.steps_per_epoch = field<int>(full, "train", "steps_per_epoch");
  t.beta = field<double>(full, "train", "beta");
  t.eps = field<double>(full, "train", "eps");
  t.clip_norm = field<double>(full, "train", "clip_norm");
  t.crop = grid(full, "train", "crop");
  t.augment = field<bool>(full, "train", "augment");
  t.seed = field<std::uint64_t>(full, "train", "seed");

  PhantomSpec& p = c.phantom;
  p.extents = grid(full, "phantom", "extents");
  auto sp = field<std::vector<double>>(full, "phantom", "spacing");
  if (sp.size() != 3) throw ConfigError("config key 'phantom.spacing' needs 3 entries");
  p.spacing = {sp[0], sp[1], sp[2]};
  p.tubes = field<int>(full, "phantom", "tubes");
  p.radius_min = field<double>(full, "phantom", "radius_min");
  p.radius_max = field<double>(full, "phantom", "radius_max");
  p.background_hu = field<double>(full, "phantom", "background_hu");
  p.liver_hu = field<double>(full, "phantom", "liver_hu");
  p.contrast_hu = field<double>(full, "phantom", "contrast_hu");
  p.noise_sigma = field<double>(full, "phantom", "noise_sigma");
  const auto layout = field<std::string>(full, "phantom", "layout");
  if (layout == "branching") {
    p.layout = PhantomLayout::kBranching;
  } else if (layout == "straight") {
    p.layout = PhantomLayout::kStraight;
  } else {
    throw ConfigError("config key 'phantom.layout': unknown layout '" + layout + "' (expected branching, straight)");
  }
  p.seed = field<std::uint64_t>(full, "phantom", "seed");

  c.preprocess.target = grid(full, "preprocess", "target");
  c.preprocess.hu_lo = field<float>(full, "preprocess", "hu_lo");
  c.preprocess.hu_hi = field<float>(full, "preprocess", "hu_hi");
  c.infer.stride = field<std::int64_t>(full, "infer", "stride");
  c.eval.threshold = field<double>(full, "eval", "threshold");
  c.eval.min_component_mm3 = field<double>(full, "eval", "min_component_mm3");
  c.eval.connectivity = field<int>(full, "eval", "connectivity");
  c.eval.close_radius = field<int>(full, "eval", "close_radius");
  c.validate();
  return c;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("cannot open config '" + path.string() + "'");
  try {
    return json::parse(f);
  } catch (const json::parse_error& e) {
    throw FormatError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  }
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    if (text.find(',') != std::string::npos) {
      value = json::array();
      std::stringstream ss(text);
      std::string item;
      while (std::getline(ss, item, ',')) {
        try {
          value.push_back(json::parse(item));
        } catch (const json::parse_error&) {
          throw ConfigError("override '" + assignment + "': list entry '" + item + "' is not a number");
        }
      }
    } else {
      value = text;
    }
  }
  std::vector<std::string> parts;
  for (std::size_t start = 0;;) {
    const auto dot = key.find('.', start);
    parts.push_back(key.substr(start, dot == std::string::npos ? std::string::npos : dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  const json schema = to_json(RunConfig{});
  const json* node = &schema;
  for (const auto& part : parts) {
    if (!node->is_object() || !node->contains(part)) throw ConfigError("unknown config key '" + key + "'");
    node = &node->at(part);
  }
  if (node->is_object()) throw ConfigError("config key '" + key + "' names a section, not a value");
  // Integers are acceptable where the default is a floating-point number.
  if (!same_kind(*node, value)) {
    throw ConfigError("config key '" + key + "' expects " + std::string(node->type_name()) + " like " + node->dump() +
                      ", got " + value.dump());
  }
  json* target = &doc;
  for (const auto& part : parts) {
    if (!target->is_object()) *target = json::object();
    target = &(*target)[part];
  }
  *target = value;
}

}  // namespace ibv
