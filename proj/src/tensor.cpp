#include "hkt/tensor.hpp"

#include <cmath>
#include <utility>

#include "hkt/errors.hpp"

namespace hkt {

namespace {

thread_local Tape* g_active_tape = nullptr;
thread_local std::uint64_t g_tape_gen = 0;

}  // namespace

double Tensor::item() const {
    if (!is_scalar()) {
        throw UsageError("item: tensor " + shape_str(shape) + " is not scalar");
    }
    return data[0];
}

void Tensor::ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
}

void Tensor::zero_grad() {
    for (double& g : grad) g = 0.0;
}

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) s += "x";
        s += std::to_string(shape[i]);
    }
    s += "]";
    return s;
}

namespace {

void validate_shape(const std::vector<std::size_t>& shape) {
    if (shape.empty()) throw DimensionError("tensor shape must have at least one dimension");
    for (std::size_t d : shape) {
        if (d == 0) throw DimensionError("tensor shape " + shape_str(shape) + " has a zero dimension");
    }
}

}  // namespace

TensorPtr zeros(std::vector<std::size_t> shape, bool requires_grad) {
    validate_shape(shape);
    auto t = std::make_shared<Tensor>();
    t->data.assign(shape_numel(shape), 0.0);
    t->shape = std::move(shape);
    t->requires_grad = requires_grad;
    return t;
}

TensorPtr full(std::vector<std::size_t> shape, double value, bool requires_grad) {
    auto t = zeros(std::move(shape), requires_grad);
    for (double& v : t->data) v = value;
    return t;
}

TensorPtr from_data(std::vector<std::size_t> shape, std::vector<double> data, bool requires_grad) {
    validate_shape(shape);
    if (shape_numel(shape) != data.size()) {
        throw DimensionError("from_data: shape " + shape_str(shape) + " wants " +
                             std::to_string(shape_numel(shape)) + " elements, got " +
                             std::to_string(data.size()));
    }
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    t->data = std::move(data);
    t->requires_grad = requires_grad;
    return t;
}

TensorPtr scalar_tensor(double value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

Tape::Tape() : prev_(g_active_tape), gen_(++g_tape_gen) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

std::int64_t Tape::record(TensorPtr output, std::vector<TensorPtr> inputs,
                          std::function<void()> backward) {
    const auto id = static_cast<std::int64_t>(nodes_.size());
    output->tape_id = id;
    output->tape_gen = gen_;
    nodes_.push_back(Node{std::move(output), std::move(inputs), std::move(backward)});
    return id;
}

void Tape::run_backward(const TensorPtr& loss) {
    if (!loss->is_scalar()) {
        throw UsageError("backward: loss must be scalar, got " + shape_str(loss->shape));
    }
    if (loss->tape_id >= 0 && loss->tape_gen != gen_) {
        throw UsageError("backward: loss was produced under a different tape");
    }
    // Reset interior grads so a second sweep on this tape cannot double-count
    // through node outputs. Leaf tensors (params, inputs) are never node
    // outputs, so their grads keep accumulating across sweeps.
    for (Node& node : nodes_) node.output->clear_grad();
    loss->ensure_grad();
    loss->grad[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (!it->output->has_grad()) continue;  // not on any path to the loss
        it->backward();
    }
}

bool tracks_grad(const TensorPtr& t) {
    if (t->requires_grad) return true;
    Tape* tape = Tape::active();
    return tape != nullptr && t->tape_id >= 0 && t->tape_gen == tape->generation();
}

void backward(const TensorPtr& loss) {
    Tape* tape = Tape::active();
    if (tape == nullptr) throw UsageError("backward: no active tape");
    tape->run_backward(loss);
}

}  // namespace hkt
