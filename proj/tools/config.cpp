#include "config.hpp"

#include <fstream>

#include "bbox/error.hpp"

namespace bbox::cli {

namespace {

using json = nlohmann::json;

void only_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorCode::Config, where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw Error(ErrorCode::Config, where + ": unknown key '" + key + "'");
    }
  }
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::Config, where + "." + key + ": wrong type");
  }
}

json train_json(const TrainConfig& t) {
  json j = {{"epochs", t.epochs},
            {"batch_size", t.batch_size},
            {"learning_rate", t.learning_rate},
            {"optimizer", t.optimizer == Optimizer::Sgd ? "sgd" : "sgd-momentum"},
            {"momentum", t.momentum},
            {"seed", t.seed}};
  if (t.adversarial) {
    json a = {{"steps", t.adversarial->pgd_steps}, {"epsilon", t.adversarial->pgd_epsilon}};
    if (t.adversarial->pgd_step_size) a["step_size"] = *t.adversarial->pgd_step_size;
    j["adversarial"] = a;
  }
  return j;
}

TrainConfig train_from_json(const json& j) {
  only_keys(j, {"epochs", "batch_size", "learning_rate", "optimizer", "momentum", "seed", "adversarial"}, "train");
  TrainConfig t;
  read(j, "epochs", t.epochs, "train");
  read(j, "batch_size", t.batch_size, "train");
  read(j, "learning_rate", t.learning_rate, "train");
  read(j, "momentum", t.momentum, "train");
  read(j, "seed", t.seed, "train");
  if (j.contains("optimizer")) {
    const auto o = j.at("optimizer").get<std::string>();
    if (o == "sgd") {
      t.optimizer = Optimizer::Sgd;
    } else if (o == "sgd-momentum") {
      t.optimizer = Optimizer::SgdMomentum;
    } else {
      throw Error(ErrorCode::Config, "train.optimizer must be sgd or sgd-momentum");
    }
  }
  if (j.contains("adversarial")) {
    const auto& a = j.at("adversarial");
    only_keys(a, {"steps", "epsilon", "step_size"}, "train.adversarial");
    AdversarialTraining adv;
    read(a, "steps", adv.pgd_steps, "train.adversarial");
    read(a, "epsilon", adv.pgd_epsilon, "train.adversarial");
    if (a.contains("step_size")) adv.pgd_step_size = a.at("step_size").get<double>();
    t.adversarial = adv;
  }
  t.validate();
  return t;
}

json dataset_json(const DatasetSpec& d) {
  json j = {{"source", to_string(d.source)}, {"train_fraction", d.train_fraction}};
  switch (d.source) {
    case DatasetSource::Synthetic:
      j["generator"] = d.generator;
      j["params"] = d.params;
      j["seed"] = d.seed;
      break;
    case DatasetSource::IdxFiles:
      j["images"] = d.images;
      j["labels"] = d.labels;
      break;
    case DatasetSource::RawBinary:
      j["path"] = d.path;
      j["shape"] = {d.shape.c, d.shape.h, d.shape.w};
      j["classes"] = d.classes;
      break;
  }
  return j;
}

DatasetSpec dataset_from_json(const json& j) {
  only_keys(j, {"source", "generator", "params", "seed", "images", "labels", "path", "shape", "classes",
                "train_fraction"},
            "dataset");
  DatasetSpec d;
  std::string source = "synthetic";
  read(j, "source", source, "dataset");
  read(j, "train_fraction", d.train_fraction, "dataset");
  if (!(d.train_fraction > 0.0 && d.train_fraction < 1.0)) {
    throw Error(ErrorCode::Config, "dataset.train_fraction must lie in (0, 1)");
  }
  if (source == "synthetic") {
    d.source = DatasetSource::Synthetic;
    read(j, "generator", d.generator, "dataset");
    if (j.contains("params")) d.params = j.at("params");
    read(j, "seed", d.seed, "dataset");
  } else if (source == "idx-files") {
    d.source = DatasetSource::IdxFiles;
    read(j, "images", d.images, "dataset");
    read(j, "labels", d.labels, "dataset");
    if (d.images.empty() || d.labels.empty()) throw Error(ErrorCode::Config, "dataset: idx-files needs images and labels");
  } else if (source == "raw-binary") {
    d.source = DatasetSource::RawBinary;
    read(j, "path", d.path, "dataset");
    std::vector<std::size_t> shape;
    read(j, "shape", shape, "dataset");
    if (shape.size() != 3) throw Error(ErrorCode::Config, "dataset.shape needs three entries");
    d.shape = Shape{shape[0], shape[1], shape[2]};
    read(j, "classes", d.classes, "dataset");
  } else {
    throw Error(ErrorCode::Config, "dataset.source must be synthetic, idx-files or raw-binary");
  }
  return d;
}

json attack_json(const AttackSpec& a) {
  json j = {{"id", a.id}, {"params", a.params}, {"threat_model", to_json(a.threat_model)}};
  if (!a.label.empty()) j["label"] = a.label;
  if (a.override_threat_model) j["override_threat_model"] = true;
  return j;
}

AttackSpec attack_from_json(const json& j, const ThreatModel& fallback) {
  only_keys(j, {"id", "label", "params", "threat_model", "override_threat_model"}, "attack");
  AttackSpec a;
  read(j, "id", a.id, "attack");
  if (a.id.empty()) throw Error(ErrorCode::Config, "attack: missing 'id'");
  builtin_profile(a.id);
  read(j, "label", a.label, "attack");
  if (j.contains("params")) a.params = j.at("params");
  if (!a.params.is_object()) throw Error(ErrorCode::Config, "attack.params must be an object");
  a.threat_model = j.contains("threat_model") ? threat_model_from_json(j.at("threat_model")) : fallback;
  read(j, "override_threat_model", a.override_threat_model, "attack");
  return a;
}

}  // namespace

RunConfig default_config() {
  RunConfig c;
  c.target.architecture = "conv";
  c.target.seed = 11;
  ModelSpec surrogate;
  surrogate.architecture = "mlp";
  surrogate.seed = 23;
  surrogate.train.seed = 23;
  c.surrogates.push_back(surrogate);
  c.threat_model.quality = DataQuality::CompleteOverlap;
  c.threat_model.quantity = DataQuantity::Sufficient;
  AttackSpec a;
  a.id = "i-fgsm";
  a.threat_model = c.threat_model;
  c.attacks.push_back(a);
  return c;
}

json to_json(const ModelSpec& m) {
  if (m.path) return {{"path", *m.path}};
  return {{"architecture", m.architecture}, {"seed", m.seed}, {"train", train_json(m.train)}};
}

ModelSpec model_from_json(const json& j) {
  if (j.is_string()) return ModelSpec{j.get<std::string>(), "conv", 0, {}};
  only_keys(j, {"path", "architecture", "seed", "train"}, "model");
  ModelSpec m;
  if (j.contains("path")) {
    if (j.size() != 1) throw Error(ErrorCode::Config, "model: 'path' excludes the other keys");
    m.path = j.at("path").get<std::string>();
    return m;
  }
  read(j, "architecture", m.architecture, "model");
  if (m.architecture != "linear" && m.architecture != "mlp" && m.architecture != "conv") {
    throw Error(ErrorCode::Config, "model.architecture must be linear, mlp or conv");
  }
  read(j, "seed", m.seed, "model");
  if (j.contains("train")) m.train = train_from_json(j.at("train"));
  return m;
}

json to_json(const RunConfig& c) {
  json attacks = json::array();
  for (const auto& a : c.attacks) attacks.push_back(attack_json(a));
  json surrogates = json::array();
  for (const auto& s : c.surrogates) surrogates.push_back(to_json(s));
  json models = {{"target", to_json(c.target)}, {"surrogates", surrogates}};
  if (c.robust_target) models["robust_target"] = to_json(*c.robust_target);
  json j = {{"command", c.command},
            {"plan_id", c.plan_id},
            {"seed", c.seed},
            {"output", c.output},
            {"dataset", dataset_json(c.dataset)},
            {"models", models},
            {"threat_model", to_json(c.threat_model)},
            {"attacks", attacks},
            {"settings", c.settings},
            {"budget", {{"mode", to_string(c.budget.kind)}, {"value", c.budget.value}}},
            {"seeds_per_run", c.seeds_per_run},
            {"batch_size", c.batch_size},
            {"override_threat_model", c.override_threat_model}};
  j["representative_iteration"] = c.representative_iteration ? json(*c.representative_iteration) : json(nullptr);
  if (!c.report_input.empty()) j["report_input"] = c.report_input;
  return j;
}

RunConfig config_from_json(const json& input) {
  const json& j = input.contains("config") && input.contains("tool") ? input.at("config") : input;
  only_keys(j, {"command", "plan_id", "seed", "output", "dataset", "models", "threat_model", "attacks", "settings",
                "budget", "seeds_per_run", "batch_size", "representative_iteration", "override_threat_model",
                "report_input", "$schema"},
            "config");
  RunConfig c = default_config();
  try {
    read(j, "command", c.command, "config");
    if (c.command != "train" && c.command != "attack" && c.command != "bench" && c.command != "report") {
      throw Error(ErrorCode::Config, "config.command must be train, attack, bench or report");
    }
    read(j, "plan_id", c.plan_id, "config");
    read(j, "seed", c.seed, "config");
    read(j, "output", c.output, "config");
    if (j.contains("dataset")) c.dataset = dataset_from_json(j.at("dataset"));
    if (j.contains("models")) {
      const auto& m = j.at("models");
      only_keys(m, {"target", "robust_target", "surrogates"}, "models");
      if (m.contains("target")) c.target = model_from_json(m.at("target"));
      if (m.contains("robust_target") && !m.at("robust_target").is_null()) {
        c.robust_target = model_from_json(m.at("robust_target"));
      }
      if (m.contains("surrogates")) {
        c.surrogates.clear();
        for (const auto& s : m.at("surrogates")) c.surrogates.push_back(model_from_json(s));
      }
    }
    if (j.contains("threat_model")) c.threat_model = threat_model_from_json(j.at("threat_model"));
    if (j.contains("attacks")) {
      c.attacks.clear();
      for (const auto& a : j.at("attacks")) c.attacks.push_back(attack_from_json(a, c.threat_model));
    } else {
      for (auto& a : c.attacks) a.threat_model = c.threat_model;
    }
    read(j, "settings", c.settings, "config");
    if (c.settings.size() == 1 && c.settings.front() == "sweep") {
      c.settings.clear();
      for (const auto& s : hard_setting_sweep()) c.settings.push_back(s.name);
    }
    for (const auto& s : c.settings) setting_by_name(s);
    if (j.contains("budget")) {
      const auto& b = j.at("budget");
      only_keys(b, {"mode", "value"}, "budget");
      c.budget.kind = budget_kind_from_string(b.at("mode").get<std::string>());
      c.budget.value = b.at("value").get<double>();
      c.budget.validate();
    }
    read(j, "seeds_per_run", c.seeds_per_run, "config");
    read(j, "batch_size", c.batch_size, "config");
    if (j.contains("representative_iteration") && !j.at("representative_iteration").is_null()) {
      c.representative_iteration = j.at("representative_iteration").get<std::size_t>();
    }
    read(j, "override_threat_model", c.override_threat_model, "config");
    read(j, "report_input", c.report_input, "config");
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Config, std::string("config: ") + e.what());
  }
  if (c.seeds_per_run == 0 || c.batch_size == 0) throw Error(ErrorCode::Config, "seeds_per_run and batch_size must be positive");
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Config, path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

}  // namespace bbox::cli
