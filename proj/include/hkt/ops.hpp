#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "hkt/tensor.hpp"

namespace hkt {

// Every op is a pure function of its tensor arguments: it returns a fresh
// tensor and never mutates inputs. When a tape is active and any input
// tracks gradient, the op records a backward rule. All outputs are checked
// finite before returning (NumericError otherwise).

/// [m x k] · [k x n] -> [m x n].
TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);

/// [m x n] -> [n x m].
TensorPtr transpose2d(const TensorPtr& a);

/// Reinterprets the flat data under a new shape with equal element count.
TensorPtr reshape(const TensorPtr& a, std::vector<std::size_t> new_shape);

/// Strips the leading (batch) dimension: [N x d1 x ...] -> [d1 x ...]
/// for sample index i. Rank-1 input yields a scalar-shaped [1].
TensorPtr slice_sample(const TensorPtr& a, std::size_t index);

/// Inverse of slice_sample over a full batch: N tensors of identical
/// shape S -> [N x S...].
TensorPtr stack_samples(const std::vector<TensorPtr>& samples);

/// Row-wise softmax with max subtraction. Rows sum to 1 within 1e-9.
TensorPtr softmax_rows(const TensorPtr& a);

/// Per-pixel channel map: x [N x C x H x W], w [C' x C], optional b [C']
/// -> [N x C' x H x W]. Pass nullptr for b to omit the bias.
TensorPtr conv1x1(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b);

/// Bilinear resize, align-corners-false with edge clamping:
/// src = clamp((i + 0.5) * H / out_h - 0.5, 0, H - 1). Resizing to the
/// same size is an elementwise identity.
TensorPtr bilinear_resize(const TensorPtr& x, std::size_t out_h, std::size_t out_w);

TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
TensorPtr scale(const TensorPtr& a, double c);
TensorPtr hadamard(const TensorPtr& a, const TensorPtr& b);

/// [m x n] + row vector [n], broadcast down the rows (bias add).
TensorPtr add_rowvec(const TensorPtr& a, const TensorPtr& v);

TensorPtr tanh_act(const TensorPtr& a);

/// Sum of all elements -> scalar [1].
TensorPtr sum_all(const TensorPtr& a);

/// Mean absolute error over all elements. Subgradient 0 at exact ties.
TensorPtr mae_loss(const TensorPtr& pred, const TensorPtr& target);

/// Mean squared error over all elements.
TensorPtr mse_loss(const TensorPtr& pred, const TensorPtr& target);

/// Mean negative log-softmax of the true class, log-sum-exp stabilized.
/// logits [N x K], labels length N with values in [0, K).
TensorPtr cross_entropy_loss(const TensorPtr& logits, const std::vector<int>& labels);

/// Central-difference gradient check.
///
/// Runs f once under a fresh tape for analytic grads, then perturbs every
/// element of every param by +/-epsilon and re-evaluates f tape-less.
/// Returns max over elements of |analytic - numeric| / max(1, |analytic|,
/// |numeric|). Throws UsageError when called under an active tape (the
/// re-evaluations must not record), NumericError when f is non-finite.
double grad_check(const std::function<TensorPtr()>& f, const std::vector<TensorPtr>& params,
                  double epsilon);

/// SGD with momentum. step() applies v <- momentum * v + grad,
/// p <- p - lr * v, then zeroes grads. Missing grad -> UsageError.
class Sgd {
public:
    Sgd(std::vector<TensorPtr> params, double lr, double momentum);

    void step();
    void zero_grad();

    const std::vector<TensorPtr>& params() const { return params_; }
    double lr() const { return lr_; }
    void set_lr(double lr);

private:
    std::vector<TensorPtr> params_;
    std::vector<std::vector<double>> velocity_;
    double lr_;
    double momentum_;
};

}  // namespace hkt
