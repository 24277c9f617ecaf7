#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vreid/tensor.hpp"

namespace vreid {

enum class Viewpoint { Front, Back };
std::string_view viewpoint_name(Viewpoint v) noexcept;
std::optional<Viewpoint> parse_viewpoint(std::string_view s) noexcept;

enum class Split { Train, Test, Offline };
std::string_view split_name(Split s) noexcept;

struct ImageRecord {
  std::string image_id;
  std::string vehicle_id;
  std::map<LayerTag, std::string> layer_paths;  // relative to the manifest directory
  std::optional<Viewpoint> gt_viewpoint;
  std::map<std::string, std::string> gt_masks;  // semantic name -> PGM mask path

  bool has_layer(LayerTag tag) const { return layer_paths.count(tag) != 0; }
};

/// JSON Lines file of ImageRecords; relative paths resolve against `base_dir`.
struct Manifest {
  std::vector<ImageRecord> records;
  Split split = Split::Test;
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const std::string& relative) const { return base_dir / relative; }
  FeatureMaps load_layer(const ImageRecord& record, LayerTag tag) const;
  BinaryMask load_gt_mask(const ImageRecord& record, const std::string& semantic) const;

  /// Records grouped by vehicle id, in manifest order.
  std::map<std::string, std::vector<std::size_t>> by_vehicle() const;

  /// Subset preserving order; shares base_dir.
  Manifest subset(const std::vector<std::size_t>& indices) const;
};

Manifest load_manifest(const std::filesystem::path& path, bool check_files = true);
void save_manifest(const std::filesystem::path& path, const Manifest& manifest);

/// Validates non-emptiness and id uniqueness.
void validate_manifest(const Manifest& manifest);

}  // namespace vreid
