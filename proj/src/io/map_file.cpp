#include "iconsal/io/map_file.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <regex>
#include <sstream>

namespace iconsal {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "map files assume a little-endian host");

std::string sanitize_name(std::string_view s) {
    static const char* hex = "0123456789ABCDEF";
    std::string out;
    for (unsigned char c : s) {
        if (std::isalnum(c) || c == '.' || c == '_' || c == '-') {
            out += static_cast<char>(c);
        } else {
            out += '%';
            out += hex[c >> 4];
            out += hex[c & 15];
        }
    }
    return out;
}

std::string map_file_name(std::string_view image_id, std::string_view class_label, MethodId method) {
    return sanitize_name(image_id) + "__" + sanitize_name(class_label) + "__" + std::string(method_id_string(method)) +
           ".npyish";
}

void write_npy(const fs::path& file, const RealGrid& grid) {
    std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': (" + std::to_string(grid.height()) +
                         ", " + std::to_string(grid.width()) + "), }";
    // magic(6) + version(2) + length(2) + header + '\n' is a multiple of 64.
    const std::size_t total = 10 + header.size() + 1;
    header.append((64 - total % 64) % 64, ' ');
    header += '\n';
    std::ofstream out(file, std::ios::binary);
    if (!out) throw MapFileError("cannot write " + file.string());
    out.write("\x93NUMPY\x01\x00", 8);
    const auto len = static_cast<std::uint16_t>(header.size());
    out.write(reinterpret_cast<const char*>(&len), 2);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    std::vector<float> data(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) data[i] = static_cast<float>(grid.storage()[i]);
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (!out) throw MapFileError("short write to " + file.string());
}

RealGrid read_npy(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw MapFileError("cannot open " + file.string());
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, "\x93NUMPY", 6) != 0) throw MapFileError(file.string() + ": not an NPY file");
    if (magic[6] != 1) throw MapFileError(file.string() + ": unsupported NPY version");
    std::uint16_t len = 0;
    in.read(reinterpret_cast<char*>(&len), 2);
    std::string header(len, '\0');
    in.read(header.data(), len);
    if (!in) throw MapFileError(file.string() + ": truncated header");
    static const std::regex descr(R"('descr':\s*'<f4')");
    static const std::regex fortran(R"('fortran_order':\s*False)");
    static const std::regex shape(R"('shape':\s*\((\d+),\s*(\d+)\))");
    std::smatch m;
    if (!std::regex_search(header, descr) || !std::regex_search(header, fortran) ||
        !std::regex_search(header, m, shape))
        throw MapFileError(file.string() + ": expected a 2-D little-endian float32 array in C order");
    const int h = std::stoi(m[1].str()), w = std::stoi(m[2].str());
    std::vector<float> data(static_cast<std::size_t>(h) * static_cast<std::size_t>(w));
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (!in) throw MapFileError(file.string() + ": truncated data");
    RealGrid g(h, w);
    for (std::size_t i = 0; i < data.size(); ++i) g.storage()[i] = data[i];
    return g;
}

fs::path meta_path(const fs::path& map_file) {
    fs::path p = map_file;
    p += ".meta";
    return p;
}

void write_meta(const fs::path& file, const MapMeta& meta) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw MapFileError("cannot write " + file.string());
    for (const auto& [k, v] : meta) {
        if (v.find('\n') != std::string::npos) throw MapFileError("meta value for '" + k + "' spans lines");
        out << k << '=' << v << '\n';
    }
}

MapMeta read_meta(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw MapFileError("cannot open " + file.string());
    MapMeta meta;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw MapFileError(file.string() + ":" + std::to_string(lineno) + ": expected key=value");
        meta[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return meta;
}

void save_map(const fs::path& dir, const SaliencyMap& map, std::string_view class_label,
              const std::string& backbone, const std::string& config_hash) {
    const fs::path file = dir / map_file_name(map.image_id, class_label, map.method);
    MapMeta meta{{"image_id", map.image_id},
                 {"class", std::string(class_label)},
                 {"method", std::string(method_id_string(map.method))},
                 {"prompt", map.prompt},
                 {"backbone", backbone},
                 {"config_hash", config_hash},
                 {"degenerate", map.degenerate ? "1" : "0"},
                 {"forward_passes", std::to_string(map.passes.forward_passes)},
                 {"backward_passes", std::to_string(map.passes.backward_passes)},
                 {"partial_passes", std::to_string(map.passes.partial_passes)},
                 {"height", std::to_string(map.values.height())},
                 {"width", std::to_string(map.values.width())}};
    write_meta(meta_path(file), meta);
    fs::path tmp = file;
    tmp += ".tmp";
    write_npy(tmp, map.values);
    fs::rename(tmp, file);
}

}  // namespace iconsal
