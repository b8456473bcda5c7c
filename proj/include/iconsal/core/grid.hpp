#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace iconsal {

/// Dense row-major 2-D array. Used for saliency maps, masks and feature planes.
template <typename T>
class Grid {
public:
    Grid() = default;
    Grid(int height, int width, T fill = T{})
        : height_(height), width_(width),
          data_(static_cast<std::size_t>(checked(height)) * static_cast<std::size_t>(checked(width)), fill) {}
    Grid(int height, int width, std::vector<T> values)
        : height_(checked(height)), width_(checked(width)), data_(std::move(values)) {
        if (data_.size() != static_cast<std::size_t>(height_) * static_cast<std::size_t>(width_))
            throw std::invalid_argument("Grid: value count does not match shape");
    }

    int height() const { return height_; }
    int width() const { return width_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T& operator()(int y, int x) { return data_[index(y, x)]; }
    const T& operator()(int y, int x) const { return data_[index(y, x)]; }

    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }
    std::vector<T>& storage() { return data_; }
    const std::vector<T>& storage() const { return data_; }

    bool same_shape(const Grid& other) const {
        return height_ == other.height_ && width_ == other.width_;
    }

    friend bool operator==(const Grid&, const Grid&) = default;

private:
    static int checked(int n) {
        if (n < 0) throw std::invalid_argument("Grid: negative dimension");
        return n;
    }
    std::size_t index(int y, int x) const {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
    }

    int height_ = 0;
    int width_ = 0;
    std::vector<T> data_;
};

using RealGrid = Grid<double>;
using MaskGrid = Grid<unsigned char>;

}  // namespace iconsal
