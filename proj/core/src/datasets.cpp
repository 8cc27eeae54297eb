// Copyright 2026 The kdvit Authors
// SPDX-License-Identifier: Apache-2.0

#include "kdvit/datasets.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "kdvit/error.hpp"
#include "kdvit/image_io.hpp"
#include "kdvit/rng.hpp"

namespace kdvit {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

bool parse_flag(const std::string& text, const std::string& column, std::size_t line) {
  if (text == "0") return false;
  if (text == "1") return true;
  fail(Errc::kSchema, "line " + std::to_string(line) + ": column " + column + " must be 0 or 1, got '" +
                          text + "'");
}

}  // namespace

std::string_view to_string(Side s) { return s == Side::kPalmar ? "palmar" : "dorsal"; }
std::string_view to_string(Hand h) { return h == Hand::kLeft ? "left" : "right"; }

Side parse_side(std::string_view text) {
  if (text == "palmar") return Side::kPalmar;
  if (text == "dorsal") return Side::kDorsal;
  fail(Errc::kSchema, "side must be palmar or dorsal, got '" + std::string(text) + "'");
}

Hand parse_hand(std::string_view text) {
  if (text == "left") return Hand::kLeft;
  if (text == "right") return Hand::kRight;
  fail(Errc::kSchema, "hand must be left or right, got '" + std::string(text) + "'");
}

int DatasetManifest::label_of(const SampleRecord& r) const {
  const auto it = class_index.find(r.subject_id);
  require(it != class_index.end(), Errc::kSchema, "subject " + r.subject_id + " has no class index");
  return it->second;
}

void DatasetManifest::rebuild_class_index() {
  std::set<std::string> subjects;
  for (const auto& r : records) subjects.insert(r.subject_id);
  class_index.clear();
  int next = 0;
  for (const auto& s : subjects) class_index.emplace(s, next++);
}

void DatasetManifest::validate() const {
  std::vector<bool> seen(class_index.size(), false);
  for (const auto& [subject, index] : class_index) {
    require(index >= 0 && index < num_classes() && !seen[index], Errc::kSchema,
            "class indices are not dense in [0, C)");
    seen[index] = true;
  }
  for (const auto& r : records) {
    require(!r.subject_id.empty(), Errc::kSchema, "record with empty subject_id");
    require(class_index.contains(r.subject_id), Errc::kSchema,
            "subject " + r.subject_id + " missing from the class map");
    require(!r.path.empty() || r.pixels != nullptr, Errc::kSchema,
            "record for subject " + r.subject_id + " has neither a path nor pixels");
  }
}

DatasetManifest load_manifest(const std::filesystem::path& file, std::string domain,
                              bool check_files) {
  std::ifstream in(file);
  require(static_cast<bool>(in), Errc::kIo, "cannot open manifest " + file.string());
  std::string header;
  require(static_cast<bool>(std::getline(in, header)), Errc::kSchema,
          "manifest " + file.string() + " is empty");
  header = trim(header);
  const bool has_side = header == kManifestHeader;
  require(has_side || header == kManifestHeaderNoSide, Errc::kSchema,
          "manifest header must be '" + std::string(kManifestHeader) + "', got '" + header + "'");

  DatasetManifest manifest;
  manifest.domain = domain.empty() ? file.stem().string() : std::move(domain);
  manifest.origin = file;
  const auto base = file.parent_path();
  const std::size_t columns = has_side ? 7 : 6;

  std::string line;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    require(fields.size() == columns, Errc::kSchema,
            "line " + std::to_string(line_no) + ": expected " + std::to_string(columns) + " fields");
    for (auto& f : fields) f = trim(f);
    std::size_t k = 0;
    SampleRecord r;
    r.path = fields[k++];
    if (r.path.is_relative()) r.path = base / r.path;
    r.subject_id = fields[k++];
    require(!r.subject_id.empty(), Errc::kSchema, "line " + std::to_string(line_no) + ": empty subject_id");
    r.side = has_side ? parse_side(fields[k++]) : Side::kPalmar;
    r.hand = parse_hand(fields[k++]);
    r.accessories = parse_flag(fields[k++], "accessories", line_no);
    r.nail_polish = parse_flag(fields[k++], "nail_polish", line_no);
    r.irregularities = parse_flag(fields[k++], "irregularities", line_no);
    if (check_files) {
      require(std::filesystem::exists(r.path), Errc::kIo, "missing image file: " + r.path.string());
    }
    manifest.records.push_back(std::move(r));
  }
  manifest.rebuild_class_index();
  manifest.validate();
  return manifest;
}

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::trunc);
  require(static_cast<bool>(out), Errc::kIo, "cannot write manifest " + file.string());
  out << kManifestHeader << '\n';
  const auto base = file.parent_path();
  for (const auto& r : manifest.records) {
    require(!r.path.empty(), Errc::kInput, "cannot write an inline record to a manifest");
    const auto rel = r.path.lexically_relative(base);
    out << (rel.empty() ? r.path : rel).generic_string() << ',' << r.subject_id << ','
        << to_string(r.side) << ',' << to_string(r.hand) << ',' << int{r.accessories} << ','
        << int{r.nail_polish} << ',' << int{r.irregularities} << '\n';
  }
}

std::vector<Split> split_per_subject(const DatasetManifest& manifest, const SplitSpec& spec) {
  require(spec.n_train >= 1 && spec.n_test >= 1, Errc::kConfig, "n_train and n_test must be >= 1");
  require(spec.repeats >= 1, Errc::kConfig, "repeats must be >= 1");
  require(spec.max_subjects >= 0, Errc::kConfig, "max_subjects must be >= 0");

  std::map<std::string, std::vector<std::size_t>> by_subject;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    by_subject[manifest.records[i].subject_id].push_back(i);
  }
  const std::size_t need = static_cast<std::size_t>(spec.n_train + spec.n_test);

  std::vector<std::string> subjects;
  for (const auto& [subject, idx] : by_subject) subjects.push_back(subject);
  if (spec.max_subjects > 0) {
    require(static_cast<std::size_t>(spec.max_subjects) <= subjects.size(), Errc::kCapacity,
            "requested " + std::to_string(spec.max_subjects) + " subjects but only " +
                std::to_string(subjects.size()) + " are available");
  } else {
    for (const auto& [subject, idx] : by_subject) {
      require(idx.size() >= need, Errc::kCapacity,
              "subject " + subject + " has " + std::to_string(idx.size()) + " images, needs " +
                  std::to_string(need));
    }
  }

  std::vector<Split> out;
  for (int rep = 0; rep < spec.repeats; ++rep) {
    Rng rng(mix_seed(spec.seed, static_cast<std::uint64_t>(rep)));
    std::vector<std::string> chosen = subjects;
    if (spec.max_subjects > 0) {
      rng.shuffle(chosen);
      chosen.resize(static_cast<std::size_t>(spec.max_subjects));
      std::sort(chosen.begin(), chosen.end());
    }
    Split split;
    split.train.domain = split.test.domain = manifest.domain;
    split.train.origin = split.test.origin = manifest.origin;
    for (const auto& subject : chosen) {
      std::vector<std::size_t> idx = by_subject.at(subject);
      require(idx.size() >= need, Errc::kCapacity,
              "subject " + subject + " has " + std::to_string(idx.size()) + " images, needs " +
                  std::to_string(need));
      rng.shuffle(idx);
      for (int k = 0; k < spec.n_train; ++k) split.train.records.push_back(manifest.records[idx[k]]);
      for (int k = 0; k < spec.n_test; ++k) {
        split.test.records.push_back(manifest.records[idx[spec.n_train + k]]);
      }
    }
    if (spec.max_subjects > 0) {
      split.train.rebuild_class_index();
      split.test.class_index = split.train.class_index;
    } else {
      split.train.class_index = split.test.class_index = manifest.class_index;
    }
    out.push_back(std::move(split));
  }
  return out;
}

DatasetManifest domain_filter(const DatasetManifest& manifest, std::optional<Side> side,
                              std::optional<Hand> hand) {
  DatasetManifest out;
  out.class_index = manifest.class_index;
  out.origin = manifest.origin;
  out.domain = manifest.domain;
  if (side || hand) {
    out.domain += "[";
    if (side) out.domain += std::string(to_string(*side));
    if (side && hand) out.domain += "-";
    if (hand) out.domain += std::string(to_string(*hand));
    out.domain += "]";
  }
  for (const auto& r : manifest.records) {
    if (side && r.side != *side) continue;
    if (hand && r.hand != *hand) continue;
    out.records.push_back(r);
  }
  require(!out.records.empty(), Errc::kEmptyDomain, "filter " + out.domain + " matched no records");
  return out;
}

DatasetManifest export_manifest(const DatasetManifest& manifest, const std::filesystem::path& dir,
                                const std::string& stem) {
  std::filesystem::create_directories(dir / stem);
  DatasetManifest out = manifest;
  for (std::size_t i = 0; i < out.records.size(); ++i) {
    auto& r = out.records[i];
    if (r.pixels == nullptr) continue;
    const auto file = dir / stem / (r.subject_id + "_" + std::to_string(i) + ".png");
    write_image(*r.pixels, file);
    r.path = file;
    r.pixels.reset();
  }
  out.origin = dir / (stem + ".csv");
  write_manifest(out, out.origin);
  return out;
}

Image preprocess(const SampleRecord& record, int image_size, int channels) {
  Image img = record.pixels != nullptr ? *record.pixels : read_image(record.path);
  if (img.channels != channels) {
    require(img.channels == 3 && channels == 1, Errc::kInput,
            "cannot convert " + std::to_string(img.channels) + " channels to " + std::to_string(channels));
    Image gray(1, img.height, img.width);
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        gray.at(0, y, x) = 0.299f * img.at(0, y, x) + 0.587f * img.at(1, y, x) + 0.114f * img.at(2, y, x);
      }
    }
    img = std::move(gray);
  }
  return resize_bilinear(img, image_size, image_size);
}

void DataAudit::record(std::string phase, std::string domain, std::string origin, std::size_t records) {
  entries_.push_back({std::move(phase), std::move(domain), std::move(origin), records});
}

std::size_t DataAudit::records_read(std::string_view phase, std::string_view domain) const {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    if (e.phase == phase && e.domain == domain) n += e.records;
  }
  return n;
}

LabeledImages materialize(const DatasetManifest& manifest, int image_size, int channels) {
  manifest.validate();
  LabeledImages out;
  out.domain = manifest.domain;
  out.origin = manifest.origin.string();
  out.image_size = image_size;
  out.channels = channels;
  out.images.reserve(manifest.size());
  for (const auto& r : manifest.records) {
    out.images.push_back(preprocess(r, image_size, channels));
    out.labels.push_back(manifest.label_of(r));
  }
  return out;
}

}  // namespace kdvit
