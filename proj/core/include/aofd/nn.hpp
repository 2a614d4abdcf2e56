#pragma once

#include <string>
#include <vector>

#include "aofd/random.hpp"
#include "aofd/tensor.hpp"

namespace aofd {

// A trainable array with its gradient accumulator and SGD momentum buffer.
struct Param {
  std::string name;
  AlignedVector value;
  AlignedVector grad;
  AlignedVector velocity;

  Param() = default;
  Param(std::string param_name, std::size_t size);

  void zero_grad();
  std::size_t size() const { return value.size(); }
};

// He-normal initialisation.
void init_he_normal(Param& param, int fan_in, Rng& rng);

// Square-kernel convolution, stride 1, "same" zero padding.
struct Conv2d {
  int in_channels = 0;
  int out_channels = 0;
  int kernel_size = 0;
  Param weight;  // out x (in * k * k)
  Param bias;    // out

  Conv2d() = default;
  Conv2d(const std::string& name, int in, int out, int kernel);

  void init(Rng& rng);
  template <typename F>
  void for_each_param(F&& f) {
    f(weight);
    f(bias);
  }
  template <typename F>
  void for_each_param(F&& f) const {
    f(weight);
    f(bias);
  }
};

struct Conv2dCache {
  RowMatrix columns;  // (in * k * k) x (h * w)
  int height = 0;
  int width = 0;
};

Tensor conv2d_forward(const Conv2d& layer, const Tensor& input,
                      Conv2dCache* cache = nullptr);

// Accumulates weight/bias gradients into `layer` and returns the input
// gradient (empty when `input_grad` is false).
Tensor conv2d_backward(Conv2d& layer, const Conv2dCache& cache,
                       const Tensor& grad_output, bool input_grad = true);

void relu_inplace(Tensor& x);
// Zeroes `grad` wherever the post-activation output is not positive.
void relu_backward(const Tensor& output, Tensor& grad);

// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
Tensor maxpool2_forward(const Tensor& input, std::vector<int>* argmax);
Tensor maxpool2_backward(const Tensor& grad_output,
                         const std::vector<int>& argmax, int channels,
                         int height, int width);

// Fully connected layer applied to the rows of a batch matrix.
struct Linear {
  int in_features = 0;
  int out_features = 0;
  Param weight;  // out x in
  Param bias;    // out

  Linear() = default;
  Linear(const std::string& name, int in, int out);

  void init(Rng& rng, double stddev = 0.0);  // stddev 0 selects He scaling
  template <typename F>
  void for_each_param(F&& f) {
    f(weight);
    f(bias);
  }
  template <typename F>
  void for_each_param(F&& f) const {
    f(weight);
    f(bias);
  }
};

RowMatrix linear_forward(const Linear& layer, const RowMatrix& input);
RowMatrix linear_backward(Linear& layer, const RowMatrix& input,
                          const RowMatrix& grad_output, bool input_grad = true);

}  // namespace aofd
