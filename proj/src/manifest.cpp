#include "sslbd/manifest.hpp"

#include <algorithm>
#include <iostream>
#include <set>

#include "sslbd/errors.hpp"
#include "sslbd/hashing.hpp"

namespace sslbd {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Split split) { return split == Split::kTrain ? "train" : "val"; }

Split parse_split(const std::string& text) {
  if (text == "train") return Split::kTrain;
  if (text == "val") return Split::kVal;
  throw ConfigError("unknown split '" + text + "'");
}

std::string to_string(PoisonKind kind) {
  switch (kind) {
    case PoisonKind::kNone: return "none";
    case PoisonKind::kTargeted: return "targeted";
    case PoisonKind::kUntargeted: return "untargeted";
    case PoisonKind::kPatchedVal: return "patched_val";
  }
  return "none";
}

PoisonKind parse_poison_kind(const std::string& text) {
  for (auto k : {PoisonKind::kNone, PoisonKind::kTargeted, PoisonKind::kUntargeted, PoisonKind::kPatchedVal}) {
    if (to_string(k) == text) return k;
  }
  throw FormatError("unknown poison kind '" + text + "'");
}

std::size_t DatasetManifest::poisoned_count() const {
  return static_cast<std::size_t>(
      std::count_if(entries.begin(), entries.end(), [](const ManifestEntry& e) { return e.is_poisoned; }));
}

std::size_t DatasetManifest::class_size(int label) const {
  return static_cast<std::size_t>(
      std::count_if(entries.begin(), entries.end(), [label](const ManifestEntry& e) { return e.label == label; }));
}

int DatasetManifest::class_index(const std::string& name) const {
  auto it = std::find(classes.begin(), classes.end(), name);
  if (it == classes.end()) throw ConfigError("unknown class '" + name + "'");
  return static_cast<int>(it - classes.begin());
}

std::string DatasetManifest::content_hash() const { return sha256_hex(to_json(*this).dump()); }

namespace {

json trigger_json(const TriggerSpec& t) {
  return {{"trigger_id", t.trigger_id}, {"seed", t.seed}, {"patch_size", t.patch_size}};
}

TriggerSpec trigger_from(const json& j) {
  return {j.at("trigger_id").get<int>(), j.at("seed").get<std::uint64_t>(), j.at("patch_size").get<int>()};
}

}  // namespace

json to_json(const DatasetManifest& m) {
  json entries = json::array();
  for (const auto& e : m.entries) {
    json je = {{"image_id", e.image_id},
               {"relative_path", e.relative_path},
               {"label", e.label},
               {"split", to_string(e.split)},
               {"width", e.width},
               {"height", e.height},
               {"is_poisoned", e.is_poisoned},
               {"poison_kind", to_string(e.poison_kind)}};
    if (e.placement) je["placement"] = {{"x", e.placement->x}, {"y", e.placement->y}};
    if (e.trigger_id) je["trigger_id"] = *e.trigger_id;
    if (e.clean_twin_path) je["clean_twin_path"] = *e.clean_twin_path;
    entries.push_back(std::move(je));
  }
  json history = json::array();
  for (const auto& p : m.poison_history) {
    history.push_back({{"mode", p.mode},
                       {"target_classes", p.target_classes},
                       {"injection_rate", p.injection_rate},
                       {"within_class_fraction", p.within_class_fraction},
                       {"expected_count", p.expected_count},
                       {"rounding", p.rounding},
                       {"rng_seed", p.rng_seed},
                       {"trigger", trigger_json(p.trigger)}});
  }
  return {{"schema_version", DatasetManifest::kSchemaVersion},
          {"dataset_name", m.dataset_name},
          {"classes", m.classes},
          {"entries", std::move(entries)},
          {"poison_history", std::move(history)}};
}

DatasetManifest manifest_from_json(const json& j) {
  const int version = j.at("schema_version").get<int>();
  if (version != DatasetManifest::kSchemaVersion) {
    throw FormatError("unsupported manifest schema version " + std::to_string(version));
  }
  DatasetManifest m;
  m.dataset_name = j.at("dataset_name").get<std::string>();
  m.classes = j.at("classes").get<std::vector<std::string>>();
  for (const auto& je : j.at("entries")) {
    ManifestEntry e;
    e.image_id = je.at("image_id").get<std::string>();
    e.relative_path = je.at("relative_path").get<std::string>();
    e.label = je.at("label").get<int>();
    e.split = parse_split(je.at("split").get<std::string>());
    e.width = je.at("width").get<int>();
    e.height = je.at("height").get<int>();
    e.is_poisoned = je.at("is_poisoned").get<bool>();
    e.poison_kind = parse_poison_kind(je.value("poison_kind", std::string("none")));
    if (je.contains("placement")) {
      e.placement = PlacementRecord{e.image_id, je["placement"].at("x").get<int>(), je["placement"].at("y").get<int>()};
    }
    if (je.contains("trigger_id")) e.trigger_id = je["trigger_id"].get<int>();
    if (je.contains("clean_twin_path")) e.clean_twin_path = je["clean_twin_path"].get<std::string>();
    m.entries.push_back(std::move(e));
  }
  for (const auto& jp : j.value("poison_history", json::array())) {
    PoisonAccounting p;
    p.mode = jp.at("mode").get<std::string>();
    p.target_classes = jp.at("target_classes").get<std::vector<int>>();
    p.injection_rate = jp.at("injection_rate").get<double>();
    p.within_class_fraction = jp.at("within_class_fraction").get<double>();
    p.expected_count = jp.at("expected_count").get<std::int64_t>();
    p.rounding = jp.at("rounding").get<std::string>();
    p.rng_seed = jp.at("rng_seed").get<std::uint64_t>();
    p.trigger = trigger_from(jp.at("trigger"));
    m.poison_history.push_back(std::move(p));
  }
  validate_manifest(m);
  return m;
}

std::string dump_manifest(const DatasetManifest& manifest) { return to_json(manifest).dump(2) + "\n"; }

void save_manifest(const fs::path& path, const DatasetManifest& manifest) {
  write_text_file(path, dump_manifest(manifest));
}

DatasetManifest load_manifest(const fs::path& path) {
  try {
    return manifest_from_json(json::parse(read_text_file(path)));
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

namespace {

std::vector<std::string> list_class_dirs(const fs::path& dir) {
  std::vector<std::string> names;
  for (const auto& d : fs::directory_iterator(dir)) {
    if (d.is_directory()) names.push_back(d.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  return names;
}

}  // namespace

DatasetManifest build_manifest(const fs::path& root, Split split, const std::string& dataset_name) {
  const fs::path split_dir = root / to_string(split);
  if (!fs::is_directory(split_dir)) throw IoError("missing split directory " + split_dir.string());

  DatasetManifest m;
  m.dataset_name = dataset_name.empty() ? root.filename().string() : dataset_name;
  m.classes = fs::is_directory(root / "train") ? list_class_dirs(root / "train") : list_class_dirs(split_dir);

  std::set<std::string> seen;
  for (int label = 0; label < static_cast<int>(m.classes.size()); ++label) {
    const fs::path class_dir = split_dir / m.classes[label];
    std::vector<fs::path> files;
    if (fs::is_directory(class_dir)) {
      for (const auto& f : fs::directory_iterator(class_dir)) {
        if (!f.is_regular_file()) continue;
        if (f.path().extension() != ".png") {
          std::clog << "[manifest] skipping non-image file " << f.path().string() << "\n";
          continue;
        }
        files.push_back(f.path());
      }
    }
    if (files.empty()) std::clog << "[manifest] warning: class '" << m.classes[label] << "' is empty\n";
    std::sort(files.begin(), files.end(),
              [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
    for (const auto& f : files) {
      ManifestEntry e;
      e.image_id = f.stem().string();
      if (!seen.insert(e.image_id).second) throw DataError("duplicate image id '" + e.image_id + "'");
      e.relative_path = fs::relative(f, root).generic_string();
      e.label = label;
      e.split = split;
      const ImageSize size = read_png_size(f);
      e.width = size.width;
      e.height = size.height;
      m.entries.push_back(std::move(e));
    }
  }
  return m;
}

void validate_manifest(const DatasetManifest& m) {
  std::set<std::string> ids;
  for (const auto& e : m.entries) {
    if (!ids.insert(e.image_id).second) throw DataError("duplicate image id '" + e.image_id + "'");
    if (e.label < 0 || e.label >= static_cast<int>(m.classes.size())) {
      throw DataError("label out of range for " + e.image_id);
    }
    const bool has_fields = e.placement.has_value() && e.trigger_id.has_value();
    const bool has_any = e.placement.has_value() || e.trigger_id.has_value();
    if (e.is_poisoned && !has_fields) throw DataError("poisoned entry " + e.image_id + " lacks placement/trigger");
    if (!e.is_poisoned && has_any) throw DataError("clean entry " + e.image_id + " carries placement/trigger");
  }
}

}  // namespace sslbd
