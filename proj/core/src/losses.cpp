#include "aofd/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "aofd/error.hpp"

namespace aofd {

namespace {

// Numerically stable log(exp(a) + exp(b)).
double log_sum_exp(double a, double b) {
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

}  // namespace

void LossWeights::validate() const {
  for (double w : {alpha, beta, mu, gamma, eta}) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw InvalidArgument("loss weights must be finite and non-negative");
    }
  }
}

double classification_loss(const RowMatrix& logits, std::span<const int> labels,
                           RowMatrix* grad) {
  if (logits.cols() != 2 || static_cast<std::size_t>(logits.rows()) != labels.size()) {
    throw InvalidArgument("classification_loss: expected one logit pair per label");
  }
  const auto n = logits.rows();
  if (grad) grad->setZero(n, 2);
  if (n == 0) return 0.0;
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int label = labels[i];
    if (label != 0 && label != 1) {
      throw InvalidArgument("classification_loss: label " + std::to_string(label) +
                            " outside {0, 1}");
    }
    const double lse = log_sum_exp(logits(i, 0), logits(i, 1));
    total += lse - logits(i, label);
    if (grad) {
      for (int k = 0; k < 2; ++k) {
        const double p = std::exp(logits(i, k) - lse);
        (*grad)(i, k) = (p - (k == label ? 1.0 : 0.0)) / static_cast<double>(n);
      }
    }
  }
  return total / static_cast<double>(n);
}

double smooth_l1(double x) {
  const double a = std::abs(x);
  return a < 1.0 ? 0.5 * x * x : a - 0.5;
}

RegressionLoss bbox_regression_loss(const RowMatrix& predicted,
                                    const RowMatrix& target,
                                    std::span<const std::uint8_t> foreground,
                                    RowMatrix* grad) {
  if (predicted.cols() != 4 || target.cols() != 4 ||
      predicted.rows() != target.rows() ||
      static_cast<std::size_t>(predicted.rows()) != foreground.size()) {
    throw InvalidArgument("bbox_regression_loss: shape mismatch");
  }
  if (grad) grad->setZero(predicted.rows(), 4);
  std::size_t fg = 0;
  for (auto f : foreground) fg += f ? 1 : 0;
  RegressionLoss result;
  if (fg == 0) {
    result.no_foreground = true;
    return result;
  }
  const double inv = 1.0 / static_cast<double>(fg);
  for (Eigen::Index i = 0; i < predicted.rows(); ++i) {
    if (!foreground[i]) continue;
    for (int k = 0; k < 4; ++k) {
      const double d = predicted(i, k) - target(i, k);
      result.value += smooth_l1(d);
      if (grad) (*grad)(i, k) = (std::abs(d) < 1.0 ? d : (d > 0 ? 1.0 : -1.0)) * inv;
    }
  }
  result.value *= inv;
  return result;
}

MaskGrid compact_response(const MaskGrid& mask) {
  MaskGrid response{};
  for (int r = 0; r < kRoiSize; ++r) {
    for (int c = 0; c < kRoiSize; ++c) {
      double acc = 0.0;
      for (int dr = -1; dr <= 1; ++dr) {
        const int rr = r + dr;
        if (rr < 0 || rr >= kRoiSize) continue;
        for (int dc = -1; dc <= 1; ++dc) {
          const int cc = c + dc;
          if (cc < 0 || cc >= kRoiSize) continue;
          acc += kCompactKernel[dr + 1][dc + 1] * (1.0 - mask[rr * kRoiSize + cc]);
        }
      }
      response[r * kRoiSize + c] = acc;
    }
  }
  return response;
}

double compact_loss(const MaskGrid& mask, CompactMode mode, MaskGrid* grad) {
  for (double v : mask) {
    if (!(v >= -1e-6 && v <= 1.0 + 1e-6)) {
      throw InvalidArgument("compact_loss: mask values must lie in [0, 1]");
    }
  }
  const MaskGrid response = compact_response(mask);
  double loss = 0.0;
  MaskGrid upstream{};
  for (int i = 0; i < kRoiCells; ++i) {
    if (mode == CompactMode::kLiteral) {
      loss += response[i];
      upstream[i] = 1.0;
    } else if (response[i] > 0.0) {
      loss += response[i];
      upstream[i] = 1.0;
    }
  }
  if (grad) {
    // d(response_p)/d(mask_q) = -K[q - p]; the kernel is symmetric.
    grad->fill(0.0);
    for (int r = 0; r < kRoiSize; ++r) {
      for (int c = 0; c < kRoiSize; ++c) {
        const double up = upstream[r * kRoiSize + c];
        if (up == 0.0) continue;
        for (int dr = -1; dr <= 1; ++dr) {
          const int rr = r + dr;
          if (rr < 0 || rr >= kRoiSize) continue;
          for (int dc = -1; dc <= 1; ++dc) {
            const int cc = c + dc;
            if (cc < 0 || cc >= kRoiSize) continue;
            (*grad)[rr * kRoiSize + cc] -= up * kCompactKernel[dr + 1][dc + 1];
          }
        }
      }
    }
  }
  return loss;
}

double generator_loss(double classification, double compact,
                      const LossWeights& weights) {
  if (!std::isfinite(classification) || !std::isfinite(compact)) {
    throw InvalidArgument("generator_loss: non-finite component");
  }
  return weights.gamma * compact - weights.eta * classification;
}

SegmentationLoss segmentation_loss(const Tensor& logits,
                                   std::span<const std::uint8_t> target,
                                   std::span<const std::uint8_t> gate,
                                   Tensor* grad) {
  const auto pixels = static_cast<std::size_t>(logits.plane_size());
  if (logits.channels() != 2 || target.size() != pixels || gate.size() != pixels) {
    throw InvalidArgument("segmentation_loss: logits, target and gate differ in shape");
  }
  if (grad) *grad = Tensor(2, logits.height(), logits.width());
  std::size_t active = 0;
  for (auto g : gate) active += g ? 1 : 0;
  SegmentationLoss result;
  if (active == 0) {
    result.empty_gate = true;
    return result;
  }
  const double inv = 1.0 / static_cast<double>(active);
  const double* l0 = logits.data();
  const double* l1 = logits.data() + pixels;
  for (std::size_t p = 0; p < pixels; ++p) {
    if (!gate[p]) continue;
    const int label = target[p] ? 1 : 0;
    const double lse = log_sum_exp(l0[p], l1[p]);
    result.value += lse - (label == 1 ? l1[p] : l0[p]);
    if (grad) {
      const double p1 = std::exp(l1[p] - lse);
      const double p0 = 1.0 - p1;
      grad->data()[p] = (p0 - (label == 0 ? 1.0 : 0.0)) * inv;
      grad->data()[pixels + p] = (p1 - (label == 1 ? 1.0 : 0.0)) * inv;
    }
  }
  result.value *= inv;
  return result;
}

double total_loss(double classification, double regression, double segmentation,
                  const LossWeights& weights) {
  return weights.alpha * classification + weights.beta * regression +
         weights.mu * segmentation;
}

}  // namespace aofd
