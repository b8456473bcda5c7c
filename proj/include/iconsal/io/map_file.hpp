#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>

#include "iconsal/core/grid.hpp"
#include "iconsal/saliency/saliency_map.hpp"

namespace iconsal {

class MapFileError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Keeps [A-Za-z0-9._-] and percent-encodes everything else, so distinct
/// names stay distinct on disk.
std::string sanitize_name(std::string_view s);

/// {image_id}__{class}__{method}.npyish
std::string map_file_name(std::string_view image_id, std::string_view class_label, MethodId method);

/// NPY v1.0, little-endian float32, C order, shape (height, width).
void write_npy(const std::filesystem::path& file, const RealGrid& grid);
RealGrid read_npy(const std::filesystem::path& file);

using MapMeta = std::map<std::string, std::string>;

std::filesystem::path meta_path(const std::filesystem::path& map_file);
void write_meta(const std::filesystem::path& file, const MapMeta& meta);
MapMeta read_meta(const std::filesystem::path& file);

/// Writes the map and its sidecar; the map file is renamed into place last so
/// a present map implies a complete pair.
void save_map(const std::filesystem::path& dir, const SaliencyMap& map, std::string_view class_label,
              const std::string& backbone, const std::string& config_hash);

}  // namespace iconsal
