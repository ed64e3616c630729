#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace camforge::data {

enum class Split { train, val, test };

std::string_view to_string(Split split);
// Throws DataError naming the tag when it is not train/val/test.
Split parse_split(std::string_view tag);

struct ManifestEntry {
  std::string image;                // path relative to the manifest directory
  int label = 0;                    // image-level class id
  std::optional<std::string> mask;  // ground truth, evaluation only
  Split split = Split::train;
  std::string group;                // patient id; never crosses splits
};

struct DatasetManifest {
  std::vector<std::string> classes;
  std::uint64_t seed = 0;
  std::vector<ManifestEntry> entries;
  std::filesystem::path root;  // directory the relative paths resolve against

  std::filesystem::path resolve(const std::string& rel) const { return root / rel; }
};

// JSON layout: {"classes": [...], "seed": u64, "entries": [{"image", "label",
// "mask" (string or null), "split", "group"}]}.
DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

// Checks labels, group-level split discipline and, when `check_files` is set,
// that every referenced file exists.
void validate_manifest(const DatasetManifest& manifest, bool check_files);

}  // namespace camforge::data
