#include "aofd/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "aofd/error.hpp"

namespace aofd {

namespace {

void im2col(const Tensor& input, int kernel, RowMatrix& columns) {
  const int channels = input.channels();
  const int h = input.height();
  const int w = input.width();
  const int pad = kernel / 2;
  columns.resize(static_cast<Eigen::Index>(channels) * kernel * kernel,
                 static_cast<Eigen::Index>(h) * w);
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        double* row = columns.row((c * kernel + ky) * kernel + kx).data();
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          double* out = row + static_cast<std::ptrdiff_t>(y) * w;
          if (sy < 0 || sy >= h) {
            std::fill(out, out + w, 0.0);
            continue;
          }
          for (int x = 0; x < w; ++x) {
            const int sx = x + kx - pad;
            out[x] = (sx < 0 || sx >= w) ? 0.0 : input.at(c, sy, sx);
          }
        }
      }
    }
  }
}

void col2im(const RowMatrix& columns, int kernel, Tensor& output) {
  const int channels = output.channels();
  const int h = output.height();
  const int w = output.width();
  const int pad = kernel / 2;
  output.fill(0.0);
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        const double* row = columns.row((c * kernel + ky) * kernel + kx).data();
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;
          const double* in = row + static_cast<std::ptrdiff_t>(y) * w;
          for (int x = 0; x < w; ++x) {
            const int sx = x + kx - pad;
            if (sx >= 0 && sx < w) output.at(c, sy, sx) += in[x];
          }
        }
      }
    }
  }
}

}  // namespace

Param::Param(std::string param_name, std::size_t size)
    : name(std::move(param_name)), value(size, 0.0), grad(size, 0.0),
      velocity(size, 0.0) {}

void Param::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

void init_he_normal(Param& param, int fan_in, Rng& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  for (double& v : param.value) v = dist(rng);
}

Conv2d::Conv2d(const std::string& name, int in, int out, int kernel)
    : in_channels(in), out_channels(out), kernel_size(kernel),
      weight(name + ".weight", static_cast<std::size_t>(out) * in * kernel * kernel),
      bias(name + ".bias", static_cast<std::size_t>(out)) {
  if (in <= 0 || out <= 0 || kernel <= 0 || kernel % 2 == 0) {
    throw InvalidArgument("Conv2d: bad shape for " + name);
  }
}

void Conv2d::init(Rng& rng) {
  init_he_normal(weight, in_channels * kernel_size * kernel_size, rng);
  std::fill(bias.value.begin(), bias.value.end(), 0.0);
}

Tensor conv2d_forward(const Conv2d& layer, const Tensor& input,
                      Conv2dCache* cache) {
  if (input.channels() != layer.in_channels) {
    throw InvalidArgument("conv2d_forward: channel mismatch for " +
                          layer.weight.name);
  }
  Conv2dCache local;
  Conv2dCache& c = cache ? *cache : local;
  c.height = input.height();
  c.width = input.width();
  im2col(input, layer.kernel_size, c.columns);

  Tensor output(layer.out_channels, input.height(), input.width());
  const ConstRowMatrixMap w(layer.weight.value.data(), layer.out_channels,
                            c.columns.rows());
  const Eigen::Map<const Eigen::VectorXd> b(layer.bias.value.data(),
                                            layer.out_channels);
  auto out = output.matrix();
  out.noalias() = w * c.columns;
  out.colwise() += b;
  return output;
}

Tensor conv2d_backward(Conv2d& layer, const Conv2dCache& cache,
                       const Tensor& grad_output, bool input_grad) {
  const auto dy = grad_output.matrix();
  RowMatrixMap dw(layer.weight.grad.data(), layer.out_channels,
                  cache.columns.rows());
  Eigen::Map<Eigen::VectorXd> db(layer.bias.grad.data(), layer.out_channels);
  dw.noalias() += dy * cache.columns.transpose();
  db += dy.rowwise().sum();
  if (!input_grad) return {};

  const ConstRowMatrixMap w(layer.weight.value.data(), layer.out_channels,
                            cache.columns.rows());
  RowMatrix dcols = w.transpose() * dy;
  Tensor grad_input(layer.in_channels, cache.height, cache.width);
  col2im(dcols, layer.kernel_size, grad_input);
  return grad_input;
}

void relu_inplace(Tensor& x) {
  for (double& v : x.values()) v = v > 0.0 ? v : 0.0;
}

void relu_backward(const Tensor& output, Tensor& grad) {
  auto out = output.values();
  auto g = grad.values();
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(out[i] > 0.0)) g[i] = 0.0;
  }
}

Tensor maxpool2_forward(const Tensor& input, std::vector<int>* argmax) {
  const int oh = input.height() / 2;
  const int ow = input.width() / 2;
  Tensor output(input.channels(), oh, ow);
  if (argmax) argmax->assign(output.size(), 0);
  std::size_t o = 0;
  for (int c = 0; c < input.channels(); ++c) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x, ++o) {
        double best = -std::numeric_limits<double>::infinity();
        int best_idx = 0;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const int iy = 2 * y + dy;
            const int ix = 2 * x + dx;
            const double v = input.at(c, iy, ix);
            if (v > best) {
              best = v;
              best_idx = (c * input.height() + iy) * input.width() + ix;
            }
          }
        }
        output.values()[o] = best;
        if (argmax) (*argmax)[o] = best_idx;
      }
    }
  }
  return output;
}

Tensor maxpool2_backward(const Tensor& grad_output,
                         const std::vector<int>& argmax, int channels,
                         int height, int width) {
  Tensor grad_input(channels, height, width);
  auto g = grad_output.values();
  for (std::size_t i = 0; i < g.size(); ++i) {
    grad_input.data()[argmax[i]] += g[i];
  }
  return grad_input;
}

Linear::Linear(const std::string& name, int in, int out)
    : in_features(in), out_features(out),
      weight(name + ".weight", static_cast<std::size_t>(out) * in),
      bias(name + ".bias", static_cast<std::size_t>(out)) {
  if (in <= 0 || out <= 0) throw InvalidArgument("Linear: bad shape for " + name);
}

void Linear::init(Rng& rng, double stddev) {
  if (stddev > 0.0) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& v : weight.value) v = dist(rng);
  } else {
    init_he_normal(weight, in_features, rng);
  }
  std::fill(bias.value.begin(), bias.value.end(), 0.0);
}

RowMatrix linear_forward(const Linear& layer, const RowMatrix& input) {
  if (input.cols() != layer.in_features) {
    throw InvalidArgument("linear_forward: feature mismatch for " +
                          layer.weight.name);
  }
  const ConstRowMatrixMap w(layer.weight.value.data(), layer.out_features,
                            layer.in_features);
  const Eigen::Map<const Eigen::RowVectorXd> b(layer.bias.value.data(),
                                               layer.out_features);
  RowMatrix out = input * w.transpose();
  out.rowwise() += b;
  return out;
}

RowMatrix linear_backward(Linear& layer, const RowMatrix& input,
                          const RowMatrix& grad_output, bool input_grad) {
  RowMatrixMap dw(layer.weight.grad.data(), layer.out_features,
                  layer.in_features);
  Eigen::Map<Eigen::RowVectorXd> db(layer.bias.grad.data(), layer.out_features);
  dw.noalias() += grad_output.transpose() * input;
  db += grad_output.colwise().sum();
  if (!input_grad) return {};
  const ConstRowMatrixMap w(layer.weight.value.data(), layer.out_features,
                            layer.in_features);
  return grad_output * w;
}

}  // namespace aofd
