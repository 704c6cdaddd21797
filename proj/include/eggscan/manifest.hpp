#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eggscan/classes.hpp"
#include "eggscan/errors.hpp"
#include "eggscan/patching.hpp"

namespace eggscan {

// One line of the line-oriented JSON manifest: an image path (relative to
// the manifest file) plus its expert annotations.
struct ManifestEntry {
  std::string image_path;
  std::vector<Annotation> annotations;
};

using DatasetManifest = std::vector<ManifestEntry>;

inline nlohmann::json manifest_entry_to_json(const ManifestEntry& e) {
  nlohmann::json j;
  j["image_path"] = e.image_path;
  nlohmann::json anns = nlohmann::json::array();
  for (const Annotation& a : e.annotations) {
    anns.push_back({{"class", std::string(class_name(a.class_label))},
                    {"bbox", {a.bbox.x, a.bbox.y, a.bbox.w, a.bbox.h}}});
  }
  j["annotations"] = anns;
  return j;
}

inline void save_manifest(const std::string& path,
                          const DatasetManifest& manifest) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write manifest: " + path);
  for (const ManifestEntry& e : manifest)
    out << manifest_entry_to_json(e).dump() << "\n";
  if (!out) throw io_error("short write on manifest: " + path);
}

inline DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot read manifest: " + path);
  DatasetManifest manifest;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = "manifest line " + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw config_error(where + ": invalid JSON: " + e.what());
    }
    ManifestEntry entry;
    if (!j.contains("image_path") || !j["image_path"].is_string())
      throw config_error(where + ": missing field image_path");
    entry.image_path = j["image_path"].get<std::string>();
    if (!j.contains("annotations") || !j["annotations"].is_array())
      throw config_error(where + ": missing field annotations");
    for (const auto& a : j["annotations"]) {
      Annotation ann;
      if (!a.contains("class") || !a["class"].is_string())
        throw config_error(where + ": annotation missing field class");
      try {
        ann.class_label = parse_class(a["class"].get<std::string>());
      } catch (const invalid_input& e) {
        throw config_error(where + ": " + e.what());
      }
      if (!is_egg_class(ann.class_label))
        throw config_error(where + ": annotation class must be an egg class");
      if (!a.contains("bbox") || !a["bbox"].is_array() ||
          a["bbox"].size() != 4)
        throw config_error(where + ": annotation field bbox must be [x,y,w,h]");
      ann.bbox.x = a["bbox"][0].get<int>();
      ann.bbox.y = a["bbox"][1].get<int>();
      ann.bbox.w = a["bbox"][2].get<int>();
      ann.bbox.h = a["bbox"][3].get<int>();
      try {
        ann.bbox.check_valid();
      } catch (const invalid_input& e) {
        throw config_error(where + ": field bbox: " + e.what());
      }
      entry.annotations.push_back(ann);
    }
    manifest.push_back(std::move(entry));
  }
  return manifest;
}

// Image paths resolve relative to the manifest file's directory.
inline std::string resolve_manifest_path(const std::string& manifest_path,
                                         const std::string& image_path) {
  const std::filesystem::path img(image_path);
  if (img.is_absolute()) return img.string();
  return (std::filesystem::path(manifest_path).parent_path() / img).string();
}

}  // namespace eggscan
