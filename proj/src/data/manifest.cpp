#include "camforge/data/manifest.hpp"

#include <json.hpp>
#include <map>
#include <set>

#include "camforge/errors.hpp"
#include "camforge/io_util.hpp"

namespace camforge::data {

using nlohmann::json;

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(std::string_view tag) {
  if (tag == "train") return Split::train;
  if (tag == "val") return Split::val;
  if (tag == "test") return Split::test;
  throw DataError("unknown split tag '" + std::string(tag) + "'");
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("manifest not found: " + path.string());
  const auto bytes = read_bytes(path);
  json doc;
  try {
    doc = json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw DataError("manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  DatasetManifest m;
  m.root = path.parent_path();
  try {
    m.classes = doc.at("classes").get<std::vector<std::string>>();
    m.seed = doc.value("seed", std::uint64_t{0});
    for (const auto& e : doc.at("entries")) {
      ManifestEntry entry;
      entry.image = e.at("image").get<std::string>();
      entry.label = e.at("label").get<int>();
      if (e.contains("mask") && !e.at("mask").is_null()) entry.mask = e.at("mask").get<std::string>();
      entry.split = parse_split(e.at("split").get<std::string>());
      entry.group = e.value("group", entry.image);
      m.entries.push_back(std::move(entry));
    }
  } catch (const json::exception& e) {
    throw DataError("manifest " + path.string() + " is malformed: " + e.what());
  }
  return m;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  json doc;
  doc["classes"] = manifest.classes;
  doc["seed"] = manifest.seed;
  doc["entries"] = json::array();
  for (const auto& e : manifest.entries) {
    json j;
    j["image"] = e.image;
    j["label"] = e.label;
    j["mask"] = e.mask ? json(*e.mask) : json(nullptr);
    j["split"] = std::string(to_string(e.split));
    j["group"] = e.group;
    doc["entries"].push_back(std::move(j));
  }
  write_text_atomic(path, doc.dump(2) + "\n");
}

void validate_manifest(const DatasetManifest& manifest, bool check_files) {
  const auto num_classes = static_cast<int>(manifest.classes.size());
  std::map<std::string, Split> group_split;
  std::set<std::string> images;
  for (const auto& e : manifest.entries) {
    if (e.label < 0 || e.label >= num_classes) {
      throw DataError("entry " + e.image + " has label " + std::to_string(e.label) +
                      " outside the class table");
    }
    if (!images.insert(e.image).second) throw DataError("duplicate manifest entry " + e.image);
    auto [it, inserted] = group_split.emplace(e.group, e.split);
    if (!inserted && it->second != e.split) {
      throw DataError("group '" + e.group + "' appears in both " + std::string(to_string(it->second)) +
                      " and " + std::string(to_string(e.split)) + " splits");
    }
    if (check_files) {
      if (!std::filesystem::exists(manifest.resolve(e.image))) {
        throw DataError("missing image file " + manifest.resolve(e.image).string());
      }
      if (e.mask && !std::filesystem::exists(manifest.resolve(*e.mask))) {
        throw DataError("missing mask file " + manifest.resolve(*e.mask).string());
      }
    }
  }
}

}  // namespace camforge::data
