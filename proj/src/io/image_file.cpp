#include "iconsal/io/image_file.hpp"

#include <algorithm>
#include <cmath>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

namespace iconsal {

Image load_image(const std::filesystem::path& file) {
    const cv::Mat bgr = cv::imread(file.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) throw ImageFileError("cannot decode image " + file.string());
    Image img(bgr.cols, bgr.rows);
    for (int y = 0; y < bgr.rows; ++y) {
        const auto* row = bgr.ptr<cv::Vec3b>(y);
        for (int x = 0; x < bgr.cols; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>(row[x][2 - c]) / 255.0f;
    }
    return img;
}

void save_image(const std::filesystem::path& file, const Image& image) {
    cv::Mat bgr(image.height, image.width, CV_8UC3);
    for (int y = 0; y < image.height; ++y) {
        auto* row = bgr.ptr<cv::Vec3b>(y);
        for (int x = 0; x < image.width; ++x)
            for (int c = 0; c < 3; ++c) {
                const float v = std::clamp(image.at(y, x, c), 0.0f, 1.0f);
                row[x][2 - c] = static_cast<unsigned char>(std::lround(v * 255.0f));
            }
    }
    bool ok = false;
    try {
        ok = cv::imwrite(file.string(), bgr);
    } catch (const cv::Exception& e) {
        throw ImageFileError("cannot write " + file.string() + ": " + e.what());
    }
    if (!ok) throw ImageFileError("cannot write " + file.string());
}

Image render_overlay(const Image& image, const RealGrid& map, double alpha) {
    if (map.height() != image.height || map.width() != image.width)
        throw ImageFileError("overlay map is " + std::to_string(map.width()) + "x" + std::to_string(map.height()) +
                             ", image is " + std::to_string(image.width) + "x" + std::to_string(image.height));
    if (alpha < 0.0 || alpha > 1.0) throw ImageFileError("overlay alpha must lie in [0, 1]");
    Image out = image;
    const auto a = static_cast<float>(alpha);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x) {
            const auto v = static_cast<float>(std::clamp(map(y, x), 0.0, 1.0));
            const float colour[3] = {v, 0.0f, 1.0f - v};
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = (1.0f - a) * image.at(y, x, c) + a * colour[c];
        }
    return out;
}

}  // namespace iconsal
