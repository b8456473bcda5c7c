#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "iconsal/core/box.hpp"

namespace iconsal {

class DatasetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ImageRecord {
    std::string id;
    std::string path;  // relative to the dataset root
    int width = 0;
    int height = 0;
    bool operator==(const ImageRecord&) const = default;
};

struct GroundTruthBox {
    BoundingBox box;
    std::string class_label;
    std::string image_id;
    SizeBucket size_bucket = SizeBucket::L;
    bool operator==(const GroundTruthBox&) const = default;
};

/// One image-class pair with all of its boxes.
struct Instance {
    std::string image_id;
    std::string class_label;
    std::vector<GroundTruthBox> boxes;
    bool operator==(const Instance&) const = default;
};

struct DatasetIndex {
    std::string name;
    std::string split;
    std::vector<ImageRecord> images;    // sorted by id
    std::vector<Instance> instances;    // sorted by (image_id, class_label)
    std::vector<std::string> class_list;  // sorted

    const ImageRecord* find_image(std::string_view id) const;
    std::size_t box_count() const;
    std::size_t positive_images() const;
    std::size_t negative_images() const { return images.size() - positive_images(); }

    bool operator==(const DatasetIndex&) const = default;
};

/// Lowercases, keeps inner spaces, trims the ends.
std::string normalize_class_name(std::string_view raw);

/// Sorts images and instances, fills size buckets, validates ids and bounds.
/// `source` names the file used in error messages.
DatasetIndex finalize_index(std::string name, std::string split, std::vector<ImageRecord> images,
                            std::vector<GroundTruthBox> boxes, std::vector<std::string> declared_classes,
                            const std::string& source);

inline constexpr std::array<std::string_view, 3> kAdapters{"artdl", "canonical-json", "iconart-voc"};

/// canonical-json: `root` is a JSON file, or a directory holding {split}.json.
/// iconart-voc: VOC layout with ImageSets/Main/{split}.txt and Annotations/*.xml.
/// artdl: COCO-style annotations/{split}.json.
DatasetIndex load_dataset(const std::filesystem::path& root, std::string_view adapter, std::string_view split = "test");

DatasetIndex load_canonical_json(const std::filesystem::path& file);
DatasetIndex parse_canonical_json(std::string_view text, const std::string& source = "<memory>");
std::string to_canonical_json(const DatasetIndex& index);
void write_canonical_json(const DatasetIndex& index, const std::filesystem::path& file);

DatasetIndex load_iconart_voc(const std::filesystem::path& root, std::string_view split);
DatasetIndex load_artdl(const std::filesystem::path& root, std::string_view split);

struct ClassShare {
    std::string class_label;
    std::size_t boxes = 0;
    std::size_t images = 0;
    double box_share = 0.0;
    double image_share = 0.0;
};

/// Per-class box counts and shares, ordered by class name.
std::vector<ClassShare> class_stats(const DatasetIndex& index);

struct SizeDistribution {
    std::size_t small = 0, medium = 0, large = 0;
    double share(SizeBucket b) const;
    std::size_t total() const { return small + medium + large; }
};

/// Bucket shares over individual boxes.
SizeDistribution size_distribution(const DatasetIndex& index, const SizeCutoffs& cutoffs = {});

}  // namespace iconsal
