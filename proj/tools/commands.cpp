// Copyright 2026 The kdvit Authors
// SPDX-License-Identifier: Apache-2.0

#include "commands.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <tuple>

#include "kdvit/explain.hpp"
#include "kdvit/image_io.hpp"
#include "kdvit/teachers.hpp"
#include "kdvit/trainer.hpp"

namespace kdvit::cli {

namespace {

constexpr const char* kEvalPhase = "evaluate";

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

std::string hex(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

class RunLog {
 public:
  explicit RunLog(const std::filesystem::path& out) : path_(out / "run.jsonl") {
    std::filesystem::create_directories(out);
    file_.open(path_, std::ios::trunc);
    require(static_cast<bool>(file_), Errc::kIo, "cannot write " + path_.string());
  }

  void write(Record r, CommandOutput& output) {
    file_ << r.dump() << '\n';
    file_.flush();
    output.records.push_back(std::move(r));
  }

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ofstream file_;
};

void write_resolved_config(const RunConfig& config, std::string_view command) {
  std::filesystem::create_directories(config.out);
  Record j = to_json(config);
  j["command"] = std::string(command);
  std::ofstream(config.out / "config.json") << j.dump(2) << '\n';
}

DatasetManifest apply_filter(DatasetManifest m, const DomainFilter& f) {
  if (!f.side && !f.hand) return m;
  return domain_filter(m, f.side, f.hand);
}

struct Domains {
  std::optional<DatasetManifest> source;
  std::optional<DatasetManifest> target;
};

Domains load_domains(const DataSection& data, std::uint64_t seed) {
  Domains d;
  if (data.synth) {
    SynthOptions o = *data.synth;
    if (!data.synth_seed_explicit) o.seed = seed;
    auto [src, tgt] = synth_two_domain(o);
    src.origin = "synth:" + std::to_string(o.seed) + "/source";
    tgt.origin = "synth:" + std::to_string(o.seed) + "/target";
    d.source = std::move(src);
    d.target = std::move(tgt);
  }
  if (!data.source_manifest.empty()) d.source = load_manifest(data.source_manifest);
  if (!data.target_manifest.empty()) {
    std::string domain;
    if (data.target_manifest == data.source_manifest) domain = d.source->domain;
    d.target = load_manifest(data.target_manifest, domain);
  }
  if (d.source) d.source = apply_filter(std::move(*d.source), data.source_filter);
  if (d.target) d.target = apply_filter(std::move(*d.target), data.target_filter);
  if (d.source && d.target) {
    require(d.source->class_index == d.target->class_index, Errc::kSchema,
            "source and target manifests do not share one subject set");
    require(d.source->domain != d.target->domain, Errc::kConfig,
            "source and target resolve to the same domain '" + d.source->domain + "'; add filters");
  }
  return d;
}

SplitSpec split_for(const DataSection& data, std::uint64_t seed) {
  SplitSpec s = data.split;
  s.seed = seed;
  s.repeats = 1;
  return s;
}

struct Prepared {
  LabeledImages train;
  LabeledImages test;
  int num_classes = 0;
};

Prepared prepare(const DatasetManifest& m, const DataSection& data, std::uint64_t seed, const ViTConfig& model) {
  const Split split = split_per_subject(m, split_for(data, seed))[0];
  Prepared p;
  p.train = materialize(split.train, model.image_size, model.channels);
  p.test = materialize(split.test, model.image_size, model.channels);
  p.num_classes = split.train.num_classes();
  return p;
}

double audited_accuracy(const TinyViT<float>& model, const LabeledImages& data, DataAudit& audit) {
  audit.record(kEvalPhase, data.domain, data.origin, data.size());
  return evaluate(model, data);
}

Record loss_json(const LossBreakdown& l) {
  return {{"soft", l.soft}, {"hard", l.hard}, {"cosine", l.cosine},
          {"schedule_weight", l.schedule_weight}, {"total", l.total}};
}

Record audit_json(const DataAudit& audit, const std::string& source_domain) {
  std::map<std::tuple<std::string, std::string, std::string>, std::size_t> reads;
  for (const auto& e : audit.entries()) reads[{e.phase, e.domain, e.origin}] += e.records;
  Record list = Record::array();
  for (const auto& [key, n] : reads) {
    list.push_back({{"phase", std::get<0>(key)},
                    {"domain", std::get<1>(key)},
                    {"origin", std::get<2>(key)},
                    {"records", n}});
  }
  return {{"reads", list},
          {"source_domain", source_domain},
          {"source_records_during_adapt", audit.records_read("adapt", source_domain)}};
}

Record epoch_record(std::string_view command, const std::string& label, std::uint64_t seed,
                    const EpochRecord& e) {
  Record r;
  r["format_version"] = kFormatVersion;
  r["kind"] = "epoch";
  r["command"] = std::string(command);
  r["label"] = label;
  r["seed"] = seed;
  r["epoch"] = e.epoch;
  r["batches"] = e.batches.size();
  r["loss"] = loss_json(e.mean);
  return r;
}

Record timing(const std::string& started, double seconds) {
  return {{"started_at", started}, {"wall_clock_seconds", seconds}};
}

}  // namespace

std::vector<Record> CommandOutput::summaries() const {
  std::vector<Record> out;
  for (const auto& r : records) {
    if (r.value("kind", "") == "summary") out.push_back(r);
  }
  return out;
}

std::string comparable(const Record& summary) {
  Record copy = summary;
  copy.erase("timing");
  return copy.dump();
}

std::string strategy_label(Strategy s) {
  return s == Strategy::kNone ? "no distillation" : std::string(to_string(s));
}

CommandOutput cmd_train(const RunConfig& config) {
  config.validate("train");
  write_resolved_config(config, "train");
  CommandOutput output;
  RunLog log(config.out);
  output.log = log.path();

  for (int r = 0; r < config.repeats; ++r) {
    const std::uint64_t seed = config.repeat_seed(r);
    const std::string started = utc_now();
    const auto t0 = std::chrono::steady_clock::now();
    const Domains domains = load_domains(config.data, seed);
    DataAudit audit;
    const Prepared source = prepare(*domains.source, config.data, seed, config.model);

    ViTConfig model_cfg = config.model;
    model_cfg.num_classes = source.num_classes;
    model_cfg.seed = seed;
    TinyViT<float> model(model_cfg);
    TrainConfig train = config.train;
    train.seed = seed;
    const RunResult run = train_supervised(model, source.train, train);
    audit.record("train", source.train.domain, source.train.origin, source.train.size() * run.epochs.size());

    const std::string label = domains.source->domain + ", supervised";
    for (const auto& e : run.epochs) log.write(epoch_record("train", label, seed, e), output);

    Record acc;
    acc["source"] = audited_accuracy(model, source.test, audit);
    if (domains.target) {
      const Prepared target = prepare(*domains.target, config.data, seed, config.model);
      acc["target"] = audited_accuracy(model, target.test, audit);
    }
    const std::string ckpt = "student_seed" + std::to_string(seed) + ".ckpt";
    save_checkpoint(model, config.out / ckpt);

    Record s;
    s["format_version"] = kFormatVersion;
    s["kind"] = "summary";
    s["command"] = "train";
    s["experiment"] = domains.source->domain;
    s["label"] = label;
    s["seed"] = seed;
    s["repeats"] = config.repeats;
    s["epochs"] = config.train.epochs;
    s["num_classes"] = model_cfg.num_classes;
    s["accuracy"] = acc;
    s["checkpoint"] = ckpt;
    s["parameter_hash"] = hex(parameter_hash(model));
    s["audit"] = audit_json(audit, domains.source->domain);
    s["timing"] = timing(started, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    log.write(std::move(s), output);
  }
  return output;
}

CommandOutput cmd_adapt(const RunConfig& config) {
  config.validate("adapt");
  write_resolved_config(config, "adapt");
  CommandOutput output;
  RunLog log(config.out);
  output.log = log.path();

  for (int r = 0; r < config.repeats; ++r) {
    const std::uint64_t seed = config.repeat_seed(r);
    const Domains domains = load_domains(config.data, seed);
    const std::string source_domain = domains.source ? domains.source->domain : std::string();
    const std::string experiment = source_domain + "→" + domains.target->domain;
    const TinyViT<float> before = load_checkpoint<float>(expand_seed(config.student, seed));

    const Prepared target = prepare(*domains.target, config.data, seed, before.config());
    require(target.num_classes == before.config().num_classes, Errc::kConfig,
            "student has " + std::to_string(before.config().num_classes) + " classes, target data has " +
                std::to_string(target.num_classes));
    std::optional<Prepared> source;
    if (domains.source) source = prepare(*domains.source, config.data, seed, before.config());

    for (const Strategy strategy : config.strategies) {
      const std::string started = utc_now();
      const auto t0 = std::chrono::steady_clock::now();
      DataAudit audit;
      Record acc;
      if (source) acc["source_before"] = audited_accuracy(before, source->test, audit);
      acc["target_before"] = audited_accuracy(before, target.test, audit);

      DistillConfig distill = config.distill;
      distill.strategy = strategy;
      distill.total_epochs = config.train.epochs;
      std::optional<Teacher<float>> teacher;
      if (strategy != Strategy::kNone) {
        if (distill.teacher_kind == TeacherKind::kPriorCopy) {
          teacher = Teacher<float>::prior_copy(before);
        } else {
          std::vector<std::filesystem::path> members;
          for (const auto& t : config.teachers) members.push_back(expand_seed(t, seed));
          teacher = Teacher<float>::load_ensemble(members);
        }
      }
      TrainConfig train = config.train;
      train.seed = seed;
      TinyViT<float> student = before;
      const RunResult run = adapt(student, teacher ? &*teacher : nullptr, target.train, distill, train, &audit);

      std::string label = experiment + ", " + strategy_label(strategy);
      if (teacher) label += ", " + std::string(to_string(teacher->kind()));
      for (const auto& e : run.epochs) log.write(epoch_record("adapt", label, seed, e), output);

      if (source) acc["source_after"] = audited_accuracy(student, source->test, audit);
      acc["target_after"] = audited_accuracy(student, target.test, audit);
      const std::string ckpt =
          "adapted_" + std::string(to_string(strategy)) + "_seed" + std::to_string(seed) + ".ckpt";
      save_checkpoint(student, config.out / ckpt);

      Record s;
      s["format_version"] = kFormatVersion;
      s["kind"] = "summary";
      s["command"] = "adapt";
      s["experiment"] = experiment;
      s["label"] = label;
      s["strategy"] = std::string(to_string(strategy));
      s["teacher"] = teacher ? std::string(to_string(teacher->kind())) : std::string();
      s["seed"] = seed;
      s["repeats"] = config.repeats;
      s["epochs"] = config.train.epochs;
      s["temperature"] = distill.temperature;
      s["accuracy"] = acc;
      s["checkpoint"] = ckpt;
      s["parameter_hash"] = hex(parameter_hash(student));
      s["audit"] = audit_json(audit, source_domain);
      s["timing"] = timing(started, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
      log.write(std::move(s), output);
    }
  }
  return output;
}

CommandOutput cmd_explain(const RunConfig& config) {
  config.validate("explain");
  write_resolved_config(config, "explain");
  CommandOutput output;
  RunLog log(config.out);
  output.log = log.path();
  const ExplainSection& ex = config.explain;

  for (int r = 0; r < config.repeats; ++r) {
    const std::uint64_t seed = config.repeat_seed(r);
    const std::string started = utc_now();
    const auto t0 = std::chrono::steady_clock::now();
    const TinyViT<float> model = load_checkpoint<float>(expand_seed(ex.checkpoint.string(), seed));
    const ViTConfig& cfg = model.config();
    const Site cam_site = Site::parse(ex.cam_site, cfg);
    const Site dff_site = Site::parse(ex.dff_site, cfg);
    for (const int c : ex.classes) {
      require(c >= 0 && c < cfg.num_classes, Errc::kInput,
              "class " + std::to_string(c) + " outside [0, " + std::to_string(cfg.num_classes) + ")");
    }

    std::vector<Image> images;
    std::vector<std::string> names;
    if (!ex.images.empty()) {
      for (const auto& p : ex.images) {
        SampleRecord rec;
        rec.path = p;
        images.push_back(preprocess(rec, cfg.image_size, cfg.channels));
        names.push_back(p.filename().string());
      }
    } else {
      const Domains domains = load_domains(config.data, seed);
      const auto& m = ex.domain == "source" ? domains.source : domains.target;
      require(m.has_value(), Errc::kConfig, "no " + ex.domain + " data configured");
      const Prepared p = prepare(*m, config.data, seed, cfg);
      const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(ex.count), p.test.size());
      for (std::size_t i = 0; i < n; ++i) {
        images.push_back(p.test.images[i]);
        names.push_back(m->domain + " test " + std::to_string(i));
      }
    }

    const auto dir = config.repeats == 1 ? config.out : config.out / ("seed" + std::to_string(seed));
    std::filesystem::create_directories(dir);
    Record cams = Record::array();
    for (std::size_t i = 0; i < images.size(); ++i) {
      std::vector<int> classes = ex.classes;
      if (classes.empty()) {
        LabeledImages one;
        one.image_size = cfg.image_size;
        one.channels = cfg.channels;
        one.images = {images[i]};
        one.labels = {0};
        classes = {predict(model, one)[0]};
      }
      for (const int c : classes) {
        const HeatMap map = grad_cam(model, images[i], c, cam_site);
        const std::string file = "cam_img" + std::to_string(i) + "_class" + std::to_string(c) + ".png";
        export_heatmap(map, dir / file);
        cams.push_back({{"image", names[i]}, {"class", c}, {"file", file}, {"raw_max", map.raw_max}});
      }
    }
    const ConceptMaps concepts = dff(model, std::span<const Image>(images), ex.k, dff_site, ex.max_iters,
                                     ex.tolerance, seed);
    const auto concept_files = export_concepts(concepts, dir, "dff");

    Record s;
    s["format_version"] = kFormatVersion;
    s["kind"] = "summary";
    s["command"] = "explain";
    s["seed"] = seed;
    s["cam_site"] = cam_site.name();
    s["dff_site"] = dff_site.name();
    s["cams"] = cams;
    Record files = Record::array();
    for (const auto& f : concept_files) files.push_back(f.filename().string());
    s["dff"] = {{"k", ex.k}, {"residual", concepts.residual}, {"files", files}};
    s["timing"] = timing(started, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    log.write(std::move(s), output);
  }
  return output;
}

int exit_code(Errc code) {
  switch (code) {
    case Errc::kIo:
    case Errc::kDegenerate:
      return 1;
    default:
      return 2;
  }
}

int exit_code(const std::exception& e) {
  if (const auto* err = dynamic_cast<const Error*>(&e)) return exit_code(err->code());
  return 1;
}

Record error_record(const std::exception& e) {
  Record r;
  r["format_version"] = kFormatVersion;
  r["kind"] = "error";
  const auto* err = dynamic_cast<const Error*>(&e);
  r["code"] = err != nullptr ? std::string(to_string(err->code())) : std::string("runtime");
  r["exit_code"] = exit_code(e);
  r["message"] = e.what();
  return r;
}

}  // namespace kdvit::cli
