#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>


namespace aofd {

// Storage for every buffer Eigen maps. Eigen's kernels choose their peeling
// and summation order from the pointer alignment, so buffers must sit on the
// widest vector boundary for results to be bit-reproducible across runs.
using AlignedVector = std::vector<double, Eigen::aligned_allocator<double>>;

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixMap = Eigen::Map<RowMatrix>;
using ConstRowMatrixMap = Eigen::Map<const RowMatrix>;

// Dense channels x height x width grid of doubles, row-major per channel.
class Tensor {
 public:
  Tensor() = default;
  Tensor(int channels, int height, int width, double fill = 0.0);

  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  int plane_size() const { return height_ * width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& at(int c, int y, int x) {
    return data_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x];
  }
  double at(int c, int y, int x) const {
    return data_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x];
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  // channels x (height * width) view.
  RowMatrixMap matrix() { return {data_.data(), channels_, plane_size()}; }
  ConstRowMatrixMap matrix() const {
    return {data_.data(), channels_, plane_size()};
  }

  bool same_shape(const Tensor& other) const {
    return channels_ == other.channels_ && height_ == other.height_ &&
           width_ == other.width_;
  }
  void fill(double value);

  bool operator==(const Tensor&) const = default;

 private:
  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  AlignedVector data_;
};

}  // namespace aofd
