#include "vreid/manifest.hpp"

#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "vreid/error.hpp"
#include "vreid/fmap_io.hpp"
#include "vreid/pgm.hpp"

namespace vreid {

using nlohmann::json;

std::string_view viewpoint_name(Viewpoint v) noexcept { return v == Viewpoint::Front ? "front" : "back"; }

std::optional<Viewpoint> parse_viewpoint(std::string_view s) noexcept {
  if (s == "front") return Viewpoint::Front;
  if (s == "back") return Viewpoint::Back;
  return std::nullopt;
}

std::string_view split_name(Split s) noexcept {
  switch (s) {
    case Split::Train: return "train";
    case Split::Test: return "test";
    case Split::Offline: return "offline";
  }
  return "test";
}

namespace {

std::optional<Split> parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  if (s == "offline") return Split::Offline;
  return std::nullopt;
}

ImageRecord record_from_json(const json& j, std::size_t line) {
  const std::string where = "manifest line " + std::to_string(line);
  require(j.is_object(), ErrorCode::BadManifest, where + ": not an object");
  require(j.contains("image_id") && j["image_id"].is_string(), ErrorCode::BadManifest, where + ": image_id");
  require(j.contains("vehicle_id") && j["vehicle_id"].is_string(), ErrorCode::BadManifest,
          where + ": vehicle_id");
  require(j.contains("layers") && j["layers"].is_object(), ErrorCode::BadManifest, where + ": layers");
  ImageRecord r;
  r.image_id = j["image_id"].get<std::string>();
  r.vehicle_id = j["vehicle_id"].get<std::string>();
  for (const auto& [key, value] : j["layers"].items()) {
    const auto tag = parse_layer(key);
    require(tag.has_value() && value.is_string(), ErrorCode::BadManifest, where + ": bad layer " + key);
    r.layer_paths[*tag] = value.get<std::string>();
  }
  if (j.contains("gt_viewpoint") && !j["gt_viewpoint"].is_null()) {
    const auto vp = parse_viewpoint(j["gt_viewpoint"].get<std::string>());
    require(vp.has_value(), ErrorCode::BadManifest, where + ": gt_viewpoint");
    r.gt_viewpoint = *vp;
  }
  if (j.contains("gt_masks") && j["gt_masks"].is_object()) {
    for (const auto& [key, value] : j["gt_masks"].items()) r.gt_masks[key] = value.get<std::string>();
  }
  return r;
}

}  // namespace

FeatureMaps Manifest::load_layer(const ImageRecord& record, LayerTag tag) const {
  const auto it = record.layer_paths.find(tag);
  require(it != record.layer_paths.end(), ErrorCode::MissingLayer,
          record.image_id + " has no " + std::string(layer_name(tag)) + " layer");
  return load_feature_maps(resolve(it->second), tag);
}

BinaryMask Manifest::load_gt_mask(const ImageRecord& record, const std::string& semantic) const {
  const auto it = record.gt_masks.find(semantic);
  require(it != record.gt_masks.end(), ErrorCode::MissingGroundTruth,
          record.image_id + " has no ground-truth mask for " + semantic);
  return mask_from_image(read_pgm(resolve(it->second)));
}

std::map<std::string, std::vector<std::size_t>> Manifest::by_vehicle() const {
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < records.size(); ++i) groups[records[i].vehicle_id].push_back(i);
  return groups;
}

Manifest Manifest::subset(const std::vector<std::size_t>& indices) const {
  Manifest m;
  m.split = split;
  m.base_dir = base_dir;
  m.records.reserve(indices.size());
  for (auto i : indices) m.records.push_back(records.at(i));
  return m;
}

void validate_manifest(const Manifest& manifest) {
  require(!manifest.records.empty(), ErrorCode::EmptyManifest, "manifest has no records");
  std::set<std::string> ids;
  for (const auto& r : manifest.records) {
    require(ids.insert(r.image_id).second, ErrorCode::BadManifest, "duplicate image_id " + r.image_id);
  }
}

Manifest load_manifest(const std::filesystem::path& path, bool check_files) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::MissingFile, path.string());
  Manifest m;
  m.base_dir = path.parent_path();
  std::optional<Split> split;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      fail(ErrorCode::BadManifest, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    m.records.push_back(record_from_json(j, line_no));
    if (j.contains("split")) {
      const auto s = parse_split(j["split"].get<std::string>());
      require(s.has_value(), ErrorCode::BadManifest, "bad split tag on line " + std::to_string(line_no));
      require(!split || *split == *s, ErrorCode::BadManifest, "mixed split tags in one manifest");
      split = s;
    }
  }
  m.split = split.value_or(Split::Test);
  validate_manifest(m);
  if (check_files) {
    for (const auto& r : m.records) {
      for (const auto& [tag, rel] : r.layer_paths) {
        require(std::filesystem::exists(m.resolve(rel)), ErrorCode::MissingFile, m.resolve(rel).string());
      }
    }
  }
  return m;
}

void save_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  validate_manifest(manifest);
  const auto target_dir = path.parent_path();
  auto rebase = [&](const std::string& rel) {
    if (std::filesystem::path(rel).is_absolute()) return rel;
    const auto abs = std::filesystem::weakly_canonical(manifest.base_dir / rel);
    const auto dir = std::filesystem::weakly_canonical(target_dir.empty() ? "." : target_dir);
    return abs.lexically_relative(dir).generic_string();
  };
  std::string text;
  for (const auto& r : manifest.records) {
    json j;
    j["image_id"] = r.image_id;
    j["vehicle_id"] = r.vehicle_id;
    json layers = json::object();
    for (const auto& [tag, rel] : r.layer_paths) layers[std::string(layer_name(tag))] = rebase(rel);
    j["layers"] = layers;
    if (r.gt_viewpoint) j["gt_viewpoint"] = std::string(viewpoint_name(*r.gt_viewpoint));
    if (!r.gt_masks.empty()) {
      json masks = json::object();
      for (const auto& [sem, rel] : r.gt_masks) masks[sem] = rebase(rel);
      j["gt_masks"] = masks;
    }
    j["split"] = std::string(split_name(manifest.split));
    text += j.dump() + "\n";
  }
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace vreid
