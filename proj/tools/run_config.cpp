// Copyright 2026 The kdvit Authors
// SPDX-License-Identifier: Apache-2.0

#include "run_config.hpp"

#include <fstream>
#include <set>

#include "kdvit/error.hpp"

namespace kdvit::cli {

namespace {

using nlohmann::json;

void check_keys(const json& obj, std::string_view section, std::initializer_list<std::string_view> allowed) {
  require(obj.is_object(), Errc::kConfig, std::string(section) + " must be an object");
  const std::set<std::string_view> ok(allowed);
  for (const auto& [key, value] : obj.items()) {
    require(ok.contains(key), Errc::kConfig, "unknown key '" + key + "' in " + std::string(section));
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_relative() ? base / path : path;
}

std::string resolve_pattern(const std::filesystem::path& base, const std::string& p) {
  return resolve(base, p).string();
}

DomainFilter read_filter(const json& obj, std::string_view section) {
  check_keys(obj, section, {"side", "hand"});
  DomainFilter f;
  if (obj.contains("side")) f.side = parse_side(obj.at("side").get<std::string>());
  if (obj.contains("hand")) f.hand = parse_hand(obj.at("hand").get<std::string>());
  return f;
}

json filter_to_json(const DomainFilter& f) {
  json j = json::object();
  if (f.side) j["side"] = std::string(to_string(*f.side));
  if (f.hand) j["hand"] = std::string(to_string(*f.hand));
  return j;
}

void read_model(const json& m, ViTConfig& cfg) {
  check_keys(m, "model", {"image_size", "patch_size", "channels", "hidden_size", "intermediate_size",
                          "num_layers", "num_heads"});
  read(m, "image_size", cfg.image_size);
  read(m, "patch_size", cfg.patch_size);
  read(m, "channels", cfg.channels);
  read(m, "hidden_size", cfg.hidden_size);
  read(m, "intermediate_size", cfg.intermediate_size);
  read(m, "num_layers", cfg.num_layers);
  read(m, "num_heads", cfg.num_heads);
}

void read_train(const json& t, TrainConfig& cfg) {
  check_keys(t, "train", {"epochs", "learning_rate", "batch_size", "random_crop", "horizontal_flip",
                          "beta1", "beta2", "epsilon"});
  read(t, "epochs", cfg.epochs);
  read(t, "learning_rate", cfg.learning_rate);
  read(t, "batch_size", cfg.batch_size);
  read(t, "random_crop", cfg.random_crop);
  read(t, "horizontal_flip", cfg.horizontal_flip);
  read(t, "beta1", cfg.beta1);
  read(t, "beta2", cfg.beta2);
  read(t, "epsilon", cfg.epsilon);
}

void read_distill(const json& d, RunConfig& rc) {
  check_keys(d, "distill", {"strategy", "teacher", "temperature", "class_weights", "cosine_target"});
  read(d, "temperature", rc.distill.temperature);
  read(d, "class_weights", rc.distill.class_weights);
  read(d, "cosine_target", rc.distill.cosine_target);
  if (d.contains("teacher")) rc.distill.teacher_kind = parse_teacher_kind(d.at("teacher").get<std::string>());
  if (d.contains("strategy")) {
    rc.strategies.clear();
    const json& s = d.at("strategy");
    if (s.is_array()) {
      for (const auto& item : s) rc.strategies.push_back(parse_strategy(item.get<std::string>()));
    } else {
      rc.strategies.push_back(parse_strategy(s.get<std::string>()));
    }
  }
}

void read_data(const json& d, const std::filesystem::path& base, DataSection& data) {
  check_keys(d, "data", {"synth", "source_manifest", "target_manifest", "source_filter", "target_filter",
                         "split"});
  if (d.contains("synth")) {
    const json& s = d.at("synth");
    check_keys(s, "data.synth", {"num_subjects", "images_per_subject", "image_size", "seed", "noise"});
    SynthOptions o;
    read(s, "num_subjects", o.num_subjects);
    read(s, "images_per_subject", o.images_per_subject_per_domain);
    read(s, "image_size", o.image_size);
    read(s, "noise", o.noise);
    data.synth_seed_explicit = s.contains("seed");
    read(s, "seed", o.seed);
    data.synth = o;
  }
  if (d.contains("source_manifest")) data.source_manifest = resolve(base, d.at("source_manifest").get<std::string>());
  if (d.contains("target_manifest")) data.target_manifest = resolve(base, d.at("target_manifest").get<std::string>());
  if (d.contains("source_filter")) data.source_filter = read_filter(d.at("source_filter"), "data.source_filter");
  if (d.contains("target_filter")) data.target_filter = read_filter(d.at("target_filter"), "data.target_filter");
  if (d.contains("split")) {
    const json& s = d.at("split");
    check_keys(s, "data.split", {"n_train", "n_test", "max_subjects"});
    read(s, "n_train", data.split.n_train);
    read(s, "n_test", data.split.n_test);
    read(s, "max_subjects", data.split.max_subjects);
  }
}

void read_explain(const json& e, const std::filesystem::path& base, ExplainSection& ex) {
  check_keys(e, "explain", {"checkpoint", "images", "domain", "count", "classes", "cam_site", "dff_site", "k",
                            "max_iters", "tolerance"});
  if (e.contains("checkpoint")) ex.checkpoint = resolve(base, e.at("checkpoint").get<std::string>());
  if (e.contains("images")) {
    for (const auto& p : e.at("images")) ex.images.push_back(resolve(base, p.get<std::string>()));
  }
  read(e, "domain", ex.domain);
  read(e, "count", ex.count);
  read(e, "classes", ex.classes);
  read(e, "cam_site", ex.cam_site);
  read(e, "dff_site", ex.dff_site);
  read(e, "k", ex.k);
  read(e, "max_iters", ex.max_iters);
  read(e, "tolerance", ex.tolerance);
}

void require_file(const std::filesystem::path& p, std::string_view what) {
  require(std::filesystem::is_regular_file(p), Errc::kConfig,
          std::string(what) + " does not exist: " + p.string());
}

}  // namespace

std::filesystem::path expand_seed(const std::string& pattern, std::uint64_t seed) {
  std::string out = pattern;
  const std::string token = "{seed}";
  for (auto pos = out.find(token); pos != std::string::npos; pos = out.find(token, pos)) {
    out.replace(pos, token.size(), std::to_string(seed));
  }
  return out;
}

RunConfig run_config_from_json(const json& doc, const std::filesystem::path& base_dir) {
  RunConfig rc;
  try {
    check_keys(doc, "config", {"format_version", "model", "train", "distill", "data", "student", "teachers",
                               "explain", "runs", "repeats", "seed", "out"});
    if (doc.contains("format_version")) {
      require(doc.at("format_version").get<int>() == kFormatVersion, Errc::kConfig,
              "unsupported config format_version");
    }
    if (doc.contains("model")) read_model(doc.at("model"), rc.model);
    if (doc.contains("train")) read_train(doc.at("train"), rc.train);
    if (doc.contains("distill")) read_distill(doc.at("distill"), rc);
    if (doc.contains("data")) read_data(doc.at("data"), base_dir, rc.data);
    if (doc.contains("student")) rc.student = resolve_pattern(base_dir, doc.at("student").get<std::string>());
    if (doc.contains("teachers")) {
      for (const auto& t : doc.at("teachers")) rc.teachers.push_back(resolve_pattern(base_dir, t.get<std::string>()));
    }
    if (doc.contains("explain")) read_explain(doc.at("explain"), base_dir, rc.explain);
    if (doc.contains("runs")) {
      for (const auto& r : doc.at("runs")) rc.runs.push_back(resolve(base_dir, r.get<std::string>()));
    }
    read(doc, "repeats", rc.repeats);
    read(doc, "seed", rc.seed);
    if (doc.contains("out")) rc.out = resolve(base_dir, doc.at("out").get<std::string>());
  } catch (const json::exception& e) {
    fail(Errc::kConfig, std::string("malformed config: ") + e.what());
  }
  rc.distill.total_epochs = rc.train.epochs;
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  require(static_cast<bool>(in), Errc::kConfig, "cannot open config " + file.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    fail(Errc::kConfig, "config " + file.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(doc, file.parent_path());
}

void RunConfig::validate(std::string_view command) const {
  require(repeats >= 1, Errc::kConfig, "repeats must be >= 1");
  if (command == "report") {
    require(!runs.empty(), Errc::kAggregation, "report needs at least one run directory");
    return;
  }

  const bool has_manifests = !data.source_manifest.empty() || !data.target_manifest.empty();
  if (command != "explain" || explain.images.empty()) {
    require(data.synth.has_value() || has_manifests, Errc::kConfig,
            "data needs either a synth section or manifest paths");
  }
  if (!data.source_manifest.empty()) require_file(data.source_manifest, "source manifest");
  if (!data.target_manifest.empty()) require_file(data.target_manifest, "target manifest");
  require(data.split.n_train >= 1 && data.split.n_test >= 1, Errc::kConfig, "split sizes must be >= 1");

  if (command == "train") {
    require(data.synth.has_value() || !data.source_manifest.empty(), Errc::kConfig,
            "train needs source data");
    ViTConfig probe = model;
    probe.num_classes = std::max(probe.num_classes, 2);
    probe.validate();
    train.validate();
  } else if (command == "adapt") {
    require(data.synth.has_value() || !data.target_manifest.empty(), Errc::kConfig,
            "adapt needs target data");
    require(!student.empty(), Errc::kConfig, "adapt needs a student checkpoint");
    require(!strategies.empty(), Errc::kConfig, "adapt needs at least one strategy");
    train.validate();
    for (const Strategy s : strategies) {
      DistillConfig d = distill;
      d.strategy = s;
      require(!(s == Strategy::kMethod2 && d.teacher_kind == TeacherKind::kEnsemble), Errc::kUnsupported,
              "method2 requires a prior_copy teacher; it is not defined for an ensemble");
      require(d.temperature > 0.0, Errc::kParameter, "temperature must be > 0");
    }
    if (distill.teacher_kind == TeacherKind::kEnsemble) {
      require(teachers.size() >= 2, Errc::kConfig, "an ensemble teacher needs at least 2 checkpoints");
    }
    for (int r = 0; r < repeats; ++r) {
      require_file(expand_seed(student, repeat_seed(r)), "student checkpoint");
      for (const auto& t : teachers) require_file(expand_seed(t, repeat_seed(r)), "teacher checkpoint");
    }
  } else if (command == "explain") {
    require(!explain.checkpoint.empty(), Errc::kConfig, "explain needs a checkpoint");
    for (int r = 0; r < repeats; ++r) {
      require_file(expand_seed(explain.checkpoint.string(), repeat_seed(r)), "explain checkpoint");
    }
    for (const auto& p : explain.images) require_file(p, "image");
    require(explain.k >= 1, Errc::kConfig, "explain.k must be >= 1");
    require(explain.count >= 1, Errc::kConfig, "explain.count must be >= 1");
    require(explain.domain == "source" || explain.domain == "target", Errc::kConfig,
            "explain.domain must be source or target");
  } else {
    fail(Errc::kConfig, "unknown command " + std::string(command));
  }
}

nlohmann::ordered_json to_json(const RunConfig& rc) {
  nlohmann::ordered_json j;
  j["format_version"] = kFormatVersion;
  j["model"] = {{"image_size", rc.model.image_size},
                {"patch_size", rc.model.patch_size},
                {"channels", rc.model.channels},
                {"hidden_size", rc.model.hidden_size},
                {"intermediate_size", rc.model.intermediate_size},
                {"num_layers", rc.model.num_layers},
                {"num_heads", rc.model.num_heads}};
  j["train"] = {{"epochs", rc.train.epochs},
                {"learning_rate", rc.train.learning_rate},
                {"batch_size", rc.train.batch_size},
                {"random_crop", rc.train.random_crop},
                {"horizontal_flip", rc.train.horizontal_flip},
                {"beta1", rc.train.beta1},
                {"beta2", rc.train.beta2},
                {"epsilon", rc.train.epsilon}};
  nlohmann::ordered_json strategies = nlohmann::ordered_json::array();
  for (const Strategy s : rc.strategies) strategies.push_back(std::string(to_string(s)));
  j["distill"] = {{"strategy", strategies},
                  {"teacher", std::string(to_string(rc.distill.teacher_kind))},
                  {"temperature", rc.distill.temperature},
                  {"class_weights", rc.distill.class_weights},
                  {"cosine_target", rc.distill.cosine_target}};
  nlohmann::ordered_json data;
  if (rc.data.synth) {
    data["synth"] = {{"num_subjects", rc.data.synth->num_subjects},
                     {"images_per_subject", rc.data.synth->images_per_subject_per_domain},
                     {"image_size", rc.data.synth->image_size},
                     {"noise", rc.data.synth->noise}};
    if (rc.data.synth_seed_explicit) data["synth"]["seed"] = rc.data.synth->seed;
  }
  if (!rc.data.source_manifest.empty()) data["source_manifest"] = rc.data.source_manifest.string();
  if (!rc.data.target_manifest.empty()) data["target_manifest"] = rc.data.target_manifest.string();
  data["source_filter"] = filter_to_json(rc.data.source_filter);
  data["target_filter"] = filter_to_json(rc.data.target_filter);
  data["split"] = {{"n_train", rc.data.split.n_train},
                   {"n_test", rc.data.split.n_test},
                   {"max_subjects", rc.data.split.max_subjects}};
  j["data"] = data;
  if (!rc.student.empty()) j["student"] = rc.student;
  if (!rc.teachers.empty()) j["teachers"] = rc.teachers;
  j["repeats"] = rc.repeats;
  j["seed"] = rc.seed;
  return j;
}

}  // namespace kdvit::cli
