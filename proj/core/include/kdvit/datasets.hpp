// Copyright 2026 The kdvit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Hand-image manifests. A manifest is a comma-separated text file whose
// header is exactly
//
//   path,subject_id,side,hand,accessories,nail_polish,irregularities
//
// (or the same without `side`, in which case every record is palmar).
// Booleans are 0/1; side is palmar|dorsal; hand is left|right. Relative
// paths resolve against the manifest's directory.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "kdvit/image.hpp"

namespace kdvit {

enum class Side { kPalmar, kDorsal };
enum class Hand { kLeft, kRight };

std::string_view to_string(Side s);
std::string_view to_string(Hand h);
Side parse_side(std::string_view text);  // schema error on unknown values
Hand parse_hand(std::string_view text);

inline constexpr std::string_view kManifestHeader =
    "path,subject_id,side,hand,accessories,nail_polish,irregularities";
inline constexpr std::string_view kManifestHeaderNoSide =
    "path,subject_id,hand,accessories,nail_polish,irregularities";

struct SampleRecord {
  std::filesystem::path path;           // empty for inline records
  std::shared_ptr<const Image> pixels;  // inline payload, if any
  std::string subject_id;
  Side side = Side::kPalmar;
  Hand hand = Hand::kLeft;
  bool accessories = false;
  bool nail_polish = false;
  bool irregularities = false;
};

struct DatasetManifest {
  std::vector<SampleRecord> records;
  std::string domain;
  std::map<std::string, int> class_index;  // subject_id -> [0, C)
  std::filesystem::path origin;            // file the manifest was read from, if any

  int num_classes() const { return static_cast<int>(class_index.size()); }
  int label_of(const SampleRecord& r) const;
  std::size_t size() const { return records.size(); }

  /// Class map over the sorted distinct subject ids of `records`.
  void rebuild_class_index();
  /// Throws a schema error if any invariant is violated.
  void validate() const;
};

struct SplitSpec {
  int n_train = 4;
  int n_test = 1;
  int repeats = 1;
  std::uint64_t seed = 0;
  int max_subjects = 0;  // 0: every subject; otherwise a random subset per repeat
};

struct Split {
  DatasetManifest train;
  DatasetManifest test;
};

/// Reads and validates a manifest. When check_files is set every referenced
/// image must exist.
DatasetManifest load_manifest(const std::filesystem::path& file, std::string domain = {},
                              bool check_files = true);

/// Writes records with a path back out in the documented format.
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& file);

/// Per subject: n_train + n_test records drawn without replacement, one
/// independent draw per repeat.
std::vector<Split> split_per_subject(const DatasetManifest& manifest, const SplitSpec& spec);

/// Records matching every given predicate; the class map is inherited.
DatasetManifest domain_filter(const DatasetManifest& manifest, std::optional<Side> side,
                              std::optional<Hand> hand);

struct SynthOptions {
  int num_subjects = 10;
  int images_per_subject_per_domain = 8;
  int image_size = 32;
  std::uint64_t seed = 1;
  double noise = 0.04;
};

/// Procedural source and target domains sharing one label space. Source
/// subjects are striped textures with a coloured blob; the target domain
/// rotates the layout by 90 degrees, inverts intensities and swaps the
/// texture family for concentric rings.
std::pair<DatasetManifest, DatasetManifest> synth_two_domain(const SynthOptions& options);

/// Writes every inline image as PNG under dir and the manifest beside them.
/// Returns the exported manifest (paths instead of payloads).
DatasetManifest export_manifest(const DatasetManifest& manifest, const std::filesystem::path& dir,
                                const std::string& stem);

/// Decodes (if needed) and bilinearly resizes to size x size, values in
/// [0, 1], channel order R, G, B.
Image preprocess(const SampleRecord& record, int image_size, int channels = 3);

// ---------------------------------------------------------------------------

/// Log of every dataset read, so a run can prove which domains it touched.
class DataAudit {
 public:
  struct Entry {
    std::string phase;
    std::string domain;
    std::string origin;
    std::size_t records = 0;
  };

  void record(std::string phase, std::string domain, std::string origin, std::size_t records);
  const std::vector<Entry>& entries() const { return entries_; }

  /// Number of records read during `phase` whose domain equals `domain`.
  std::size_t records_read(std::string_view phase, std::string_view domain) const;

 private:
  std::vector<Entry> entries_;
};

/// Decoded, model-ready images with labels from one manifest.
struct LabeledImages {
  std::string domain;
  std::string origin;
  int image_size = 0;
  int channels = 3;
  std::vector<Image> images;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
};

LabeledImages materialize(const DatasetManifest& manifest, int image_size, int channels = 3);

}  // namespace kdvit
