#include "aofd/tensor.hpp"

#include <algorithm>

#include "aofd/error.hpp"

namespace aofd {

Tensor::Tensor(int channels, int height, int width, double fill)
    : channels_(channels), height_(height), width_(width) {
  if (channels < 0 || height < 0 || width < 0) {
    throw InvalidArgument("Tensor: negative dimension");
  }
  data_.assign(static_cast<std::size_t>(channels) * height * width, fill);
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

}  // namespace aofd
