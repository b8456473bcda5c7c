#include "iconsal/study/rle.hpp"

#include "iconsal/study/analysis.hpp"
#include "json.hpp"

namespace iconsal {

RleMask rle_encode(const MaskGrid& mask) {
    RleMask out{mask.width(), mask.height(), {}};
    bool current = false;
    std::int64_t run = 0;
    for (unsigned char v : mask.storage()) {
        const bool on = v != 0;
        if (on != current) {
            out.runs.push_back(run);
            run = 0;
            current = on;
        }
        ++run;
    }
    out.runs.push_back(run);
    return out;
}

MaskGrid rle_decode(const RleMask& rle) {
    if (rle.width <= 0 || rle.height <= 0) throw StudyError("mask dimensions must be positive");
    const std::int64_t total = static_cast<std::int64_t>(rle.width) * rle.height;
    MaskGrid mask(rle.height, rle.width, 0);
    std::int64_t pos = 0;
    bool on = false;
    for (std::int64_t run : rle.runs) {
        if (run < 0) throw StudyError("negative run length in mask");
        if (run > total - pos) throw StudyError("mask runs exceed width * height");
        if (on) std::fill_n(mask.storage().begin() + pos, run, static_cast<unsigned char>(1));
        pos += run;
        on = !on;
    }
    if (pos != total)
        throw StudyError("mask runs cover " + std::to_string(pos) + " of " + std::to_string(total) + " pixels");
    return mask;
}

std::int64_t rle_on_pixels(const RleMask& rle) {
    std::int64_t n = 0;
    for (std::size_t i = 1; i < rle.runs.size(); i += 2) n += rle.runs[i];
    return n;
}

std::string rle_to_json(const RleMask& rle) {
    return nlohmann::json{{"width", rle.width}, {"height", rle.height}, {"rle", rle.runs}}.dump();
}

RleMask rle_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
        return RleMask{j.at("width").get<int>(), j.at("height").get<int>(),
                       j.at("rle").get<std::vector<std::int64_t>>()};
    } catch (const nlohmann::json::exception& e) {
        throw StudyError(std::string("malformed mask: ") + e.what());
    }
}

}  // namespace iconsal
