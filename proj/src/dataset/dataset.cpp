#include "iconsal/dataset/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include "json.hpp"

namespace iconsal {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_file(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw DatasetError("cannot open " + file.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int line_of_byte(std::string_view text, std::size_t byte) {
    byte = std::min(byte, text.size());
    return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

json parse_json(std::string_view text, const std::string& source) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw DatasetError(source + ":" + std::to_string(line_of_byte(text, e.byte)) + ": malformed JSON: " + e.what());
    }
}

template <typename T>
T field(const json& obj, const char* key, const std::string& where) {
    if (!obj.is_object() || !obj.contains(key)) throw DatasetError(where + ": missing field '" + key + "'");
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw DatasetError(where + ": field '" + key + "' has the wrong type");
    }
}

std::string id_string(const json& v, const std::string& where) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_integer()) return std::to_string(v.get<long long>());
    throw DatasetError(where + ": id must be a string or an integer");
}

}  // namespace

const ImageRecord* DatasetIndex::find_image(std::string_view id) const {
    auto it = std::lower_bound(images.begin(), images.end(), id,
                               [](const ImageRecord& r, std::string_view key) { return r.id < key; });
    if (it == images.end() || it->id != id) return nullptr;
    return &*it;
}

std::size_t DatasetIndex::box_count() const {
    std::size_t n = 0;
    for (const auto& inst : instances) n += inst.boxes.size();
    return n;
}

std::size_t DatasetIndex::positive_images() const {
    std::set<std::string_view> ids;
    for (const auto& inst : instances) ids.insert(inst.image_id);
    return ids.size();
}

std::string normalize_class_name(std::string_view raw) {
    std::size_t b = 0, e = raw.size();
    while (b < e && std::isspace(static_cast<unsigned char>(raw[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(raw[e - 1]))) --e;
    std::string out(raw.substr(b, e - b));
    for (auto& ch : out) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return out;
}

DatasetIndex finalize_index(std::string name, std::string split, std::vector<ImageRecord> images,
                            std::vector<GroundTruthBox> boxes, std::vector<std::string> declared_classes,
                            const std::string& source) {
    DatasetIndex index;
    index.name = std::move(name);
    index.split = std::move(split);
    std::sort(images.begin(), images.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (images[i].width <= 0 || images[i].height <= 0)
            throw DatasetError(source + ": image '" + images[i].id + "' has non-positive dimensions");
        if (i > 0 && images[i].id == images[i - 1].id)
            throw DatasetError(source + ": duplicate image id '" + images[i].id + "'");
    }
    index.images = std::move(images);

    std::set<std::string> classes;
    for (auto& c : declared_classes) classes.insert(normalize_class_name(c));

    // Keep the input order within an instance so round trips are exact.
    std::map<std::pair<std::string, std::string>, Instance> grouped;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
        auto& b = boxes[i];
        b.class_label = normalize_class_name(b.class_label);
        if (b.class_label.empty()) throw DatasetError(source + ": box " + std::to_string(i) + " has an empty class");
        const ImageRecord* img = index.find_image(b.image_id);
        if (!img)
            throw DatasetError(source + ": box " + std::to_string(i) + " references unknown image '" + b.image_id +
                               "'");
        if (!b.box.within(img->width, img->height))
            throw DatasetError(source + ": box " + std::to_string(i) + " of image '" + b.image_id + "' [" +
                               std::to_string(b.box.x_min) + "," + std::to_string(b.box.y_min) + "," +
                               std::to_string(b.box.x_max) + "," + std::to_string(b.box.y_max) +
                               ") is empty or outside the " + std::to_string(img->width) + "x" +
                               std::to_string(img->height) + " image");
        b.size_bucket = size_bucket(b.box, img->width, img->height);
        classes.insert(b.class_label);
        auto& inst = grouped[{b.image_id, b.class_label}];
        inst.image_id = b.image_id;
        inst.class_label = b.class_label;
        inst.boxes.push_back(std::move(b));
    }
    for (auto& [key, inst] : grouped) index.instances.push_back(std::move(inst));
    index.class_list.assign(classes.begin(), classes.end());
    return index;
}

DatasetIndex load_dataset(const fs::path& root, std::string_view adapter, std::string_view split) {
    if (!fs::exists(root)) throw DatasetError("dataset root does not exist: " + root.string());
    if (adapter == "canonical-json") {
        if (fs::is_directory(root)) return load_canonical_json(root / (std::string(split) + ".json"));
        return load_canonical_json(root);
    }
    if (adapter == "iconart-voc") return load_iconart_voc(root, split);
    if (adapter == "artdl") return load_artdl(root, split);
    throw DatasetError("unknown dataset adapter '" + std::string(adapter) +
                       "' (expected artdl, canonical-json or iconart-voc)");
}

// ---- canonical json ------------------------------------------------------------

DatasetIndex load_canonical_json(const fs::path& file) { return parse_canonical_json(read_file(file), file.string()); }

DatasetIndex parse_canonical_json(std::string_view text, const std::string& source) {
    if (std::all_of(text.begin(), text.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); }))
        return DatasetIndex{};
    const json doc = parse_json(text, source);
    if (!doc.is_object()) throw DatasetError(source + ": top level must be an object");

    std::vector<ImageRecord> images;
    for (std::size_t i = 0; i < doc.value("images", json::array()).size(); ++i) {
        const auto& j = doc["images"][i];
        const std::string where = source + ": images[" + std::to_string(i) + "]";
        images.push_back({field<std::string>(j, "id", where), j.value("path", std::string{}),
                          field<int>(j, "width", where), field<int>(j, "height", where)});
    }
    std::vector<GroundTruthBox> boxes;
    for (std::size_t i = 0; i < doc.value("instances", json::array()).size(); ++i) {
        const auto& j = doc["instances"][i];
        const std::string where = source + ": instances[" + std::to_string(i) + "]";
        const auto b = field<std::vector<int>>(j, "box", where);
        if (b.size() != 4) throw DatasetError(where + ": box must have four coordinates");
        GroundTruthBox gt;
        gt.box = {b[0], b[1], b[2], b[3]};
        gt.class_label = field<std::string>(j, "class", where);
        gt.image_id = field<std::string>(j, "image_id", where);
        boxes.push_back(std::move(gt));
    }
    std::vector<std::string> classes;
    if (doc.contains("classes")) classes = field<std::vector<std::string>>(doc, "classes", source);
    return finalize_index(doc.value("name", std::string{}), doc.value("split", std::string{}), std::move(images),
                          std::move(boxes), std::move(classes), source);
}

std::string to_canonical_json(const DatasetIndex& index) {
    json doc;
    doc["name"] = index.name;
    doc["split"] = index.split;
    doc["classes"] = index.class_list;
    doc["images"] = json::array();
    for (const auto& img : index.images)
        doc["images"].push_back({{"id", img.id}, {"path", img.path}, {"width", img.width}, {"height", img.height}});
    doc["instances"] = json::array();
    for (const auto& inst : index.instances)
        for (const auto& b : inst.boxes)
            doc["instances"].push_back({{"image_id", b.image_id},
                                        {"class", b.class_label},
                                        {"box", {b.box.x_min, b.box.y_min, b.box.x_max, b.box.y_max}}});
    return doc.dump(1);
}

void write_canonical_json(const DatasetIndex& index, const fs::path& file) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw DatasetError("cannot write " + file.string());
    out << to_canonical_json(index) << '\n';
}

// ---- VOC-style xml -------------------------------------------------------------

namespace {

std::vector<std::string> read_split_file(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw DatasetError("cannot open split file " + file.string());
    std::vector<std::string> ids;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream ls(line);
        std::string id, flag;
        if (!(ls >> id)) continue;
        // Per-class split files carry a trailing 1 / -1 / 0 flag.
        if (ls >> flag && flag != "1" && flag != "-1" && flag != "0")
            throw DatasetError(file.string() + ":" + std::to_string(lineno) + ": unexpected token '" + flag + "'");
        ids.push_back(id);
    }
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
}

}  // namespace

DatasetIndex load_iconart_voc(const fs::path& root, std::string_view split) {
    namespace pt = boost::property_tree;
    const auto ids = read_split_file(root / "ImageSets" / "Main" / (std::string(split) + ".txt"));
    std::vector<ImageRecord> images;
    std::vector<GroundTruthBox> boxes;
    for (const auto& id : ids) {
        const fs::path xml = root / "Annotations" / (id + ".xml");
        if (!fs::exists(xml)) throw DatasetError("missing annotation file " + xml.string());
        pt::ptree tree;
        try {
            pt::read_xml(xml.string(), tree);
        } catch (const pt::xml_parser_error& e) {
            throw DatasetError(xml.string() + ":" + std::to_string(e.line()) + ": malformed XML: " + e.message());
        }
        try {
            const auto& ann = tree.get_child("annotation");
            ImageRecord rec;
            rec.id = id;
            rec.path = "JPEGImages/" + ann.get<std::string>("filename", id + ".jpg");
            rec.width = ann.get<int>("size.width");
            rec.height = ann.get<int>("size.height");
            images.push_back(rec);
            int obj_index = 0;
            for (const auto& [tag, obj] : ann) {
                if (tag != "object") continue;
                GroundTruthBox gt;
                gt.image_id = id;
                gt.class_label = obj.get<std::string>("name");
                // VOC corners are 1-based and inclusive.
                gt.box.x_min = static_cast<int>(std::lround(obj.get<double>("bndbox.xmin"))) - 1;
                gt.box.y_min = static_cast<int>(std::lround(obj.get<double>("bndbox.ymin"))) - 1;
                gt.box.x_max = static_cast<int>(std::lround(obj.get<double>("bndbox.xmax")));
                gt.box.y_max = static_cast<int>(std::lround(obj.get<double>("bndbox.ymax")));
                if (!gt.box.within(rec.width, rec.height))
                    throw DatasetError(xml.string() + ": object " + std::to_string(obj_index) +
                                       " has a box outside the image or with no area");
                boxes.push_back(std::move(gt));
                ++obj_index;
            }
        } catch (const pt::ptree_error& e) {
            throw DatasetError(xml.string() + ": " + e.what());
        }
    }
    return finalize_index(root.filename().string(), std::string(split), std::move(images), std::move(boxes), {},
                          root.string());
}

// ---- COCO-style json -----------------------------------------------------------

DatasetIndex load_artdl(const fs::path& root, std::string_view split) {
    const fs::path file = root / "annotations" / (std::string(split) + ".json");
    const std::string text = read_file(file);
    const json doc = parse_json(text, file.string());
    const std::string src = file.string();

    std::map<std::string, std::string> category_names;
    std::vector<std::string> classes;
    for (std::size_t i = 0; i < doc.value("categories", json::array()).size(); ++i) {
        const auto& c = doc["categories"][i];
        const std::string where = src + ": categories[" + std::to_string(i) + "]";
        if (!c.contains("id")) throw DatasetError(where + ": missing field 'id'");
        const std::string name = field<std::string>(c, "name", where);
        category_names[id_string(c["id"], where)] = name;
        classes.push_back(name);
    }

    std::map<std::string, std::string> image_ids;  // coco id -> file stem
    std::vector<ImageRecord> images;
    for (std::size_t i = 0; i < doc.value("images", json::array()).size(); ++i) {
        const auto& j = doc["images"][i];
        const std::string where = src + ": images[" + std::to_string(i) + "]";
        if (!j.contains("id")) throw DatasetError(where + ": missing field 'id'");
        const std::string file_name = field<std::string>(j, "file_name", where);
        const std::string stem = fs::path(file_name).stem().string();
        image_ids[id_string(j["id"], where)] = stem;
        images.push_back({stem, "images/" + file_name, field<int>(j, "width", where), field<int>(j, "height", where)});
    }

    std::vector<GroundTruthBox> boxes;
    for (std::size_t i = 0; i < doc.value("annotations", json::array()).size(); ++i) {
        const auto& a = doc["annotations"][i];
        const std::string where = src + ": annotations[" + std::to_string(i) + "]";
        if (!a.contains("image_id") || !a.contains("category_id"))
            throw DatasetError(where + ": missing image_id or category_id");
        const auto img = image_ids.find(id_string(a["image_id"], where));
        if (img == image_ids.end()) throw DatasetError(where + ": unknown image id");
        const auto cat = category_names.find(id_string(a["category_id"], where));
        if (cat == category_names.end()) throw DatasetError(where + ": unknown category id");
        const auto bb = field<std::vector<double>>(a, "bbox", where);
        if (bb.size() != 4) throw DatasetError(where + ": bbox must be [x, y, width, height]");
        GroundTruthBox gt;
        gt.image_id = img->second;
        gt.class_label = cat->second;
        gt.box = {static_cast<int>(std::lround(bb[0])), static_cast<int>(std::lround(bb[1])),
                  static_cast<int>(std::lround(bb[0] + bb[2])), static_cast<int>(std::lround(bb[1] + bb[3]))};
        boxes.push_back(std::move(gt));
    }
    return finalize_index(root.filename().string(), std::string(split), std::move(images), std::move(boxes),
                          std::move(classes), src);
}

// ---- statistics ----------------------------------------------------------------

std::vector<ClassShare> class_stats(const DatasetIndex& index) {
    const std::size_t total = index.box_count();
    if (total == 0) throw DatasetError("class statistics need at least one box");
    std::map<std::string, ClassShare> by_class;
    for (const auto& c : index.class_list) by_class[c].class_label = c;
    for (const auto& inst : index.instances) {
        auto& s = by_class[inst.class_label];
        s.class_label = inst.class_label;
        s.boxes += inst.boxes.size();
        s.images += 1;
    }
    std::vector<ClassShare> out;
    for (auto& [name, s] : by_class) {
        s.box_share = static_cast<double>(s.boxes) / static_cast<double>(total);
        s.image_share = index.images.empty() ? 0.0 : static_cast<double>(s.images) / static_cast<double>(index.images.size());
        out.push_back(s);
    }
    return out;
}

double SizeDistribution::share(SizeBucket b) const {
    const std::size_t n = total();
    if (n == 0) return 0.0;
    const std::size_t k = b == SizeBucket::S ? small : b == SizeBucket::M ? medium : large;
    return static_cast<double>(k) / static_cast<double>(n);
}

SizeDistribution size_distribution(const DatasetIndex& index, const SizeCutoffs& cutoffs) {
    SizeDistribution d;
    for (const auto& inst : index.instances) {
        const ImageRecord* img = index.find_image(inst.image_id);
        for (const auto& b : inst.boxes) {
            switch (size_bucket(b.box, img->width, img->height, cutoffs)) {
                case SizeBucket::S: ++d.small; break;
                case SizeBucket::M: ++d.medium; break;
                case SizeBucket::L: ++d.large; break;
            }
        }
    }
    return d;
}

}  // namespace iconsal
