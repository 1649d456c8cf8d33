#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace hkt {

struct Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

/// Dense row-major tensor of 64-bit floats.
///
/// Invariants: product(shape) == data.size(); grad, when present, has the
/// same length as data; all elements are finite after any public op
/// completes without throwing.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until backward first reaches this tensor
    bool requires_grad = false;

    // Node identity on the tape that produced this tensor. tape_id is -1 for
    // tensors created outside any op; tape_gen disambiguates stale ids after
    // the producing tape is gone.
    std::int64_t tape_id = -1;
    std::uint64_t tape_gen = 0;

    std::size_t size() const { return data.size(); }
    bool is_scalar() const { return data.size() == 1; }

    /// Scalar value. Throws UsageError when the tensor is not scalar.
    double item() const;

    bool has_grad() const { return !grad.empty(); }
    void ensure_grad();                    // allocate zeros if absent
    void zero_grad();                      // zero in place, keep allocation
    void clear_grad() { grad.clear(); }    // drop the buffer entirely
};

std::size_t shape_numel(const std::vector<std::size_t>& shape);

/// Formats a shape as "[2x3x4]" for error messages.
std::string shape_str(const std::vector<std::size_t>& shape);

TensorPtr zeros(std::vector<std::size_t> shape, bool requires_grad = false);
TensorPtr full(std::vector<std::size_t> shape, double value, bool requires_grad = false);
TensorPtr from_data(std::vector<std::size_t> shape, std::vector<double> data,
                    bool requires_grad = false);
TensorPtr scalar_tensor(double value, bool requires_grad = false);

/// Per-step reverse-mode tape.
///
/// Constructing a Tape makes it the active tape for this thread (shadowing
/// any outer one); destruction restores the previous tape. Ops append nodes
/// in execution order, which is a topological order of the dataflow graph,
/// so one reverse sweep visits every node exactly once. The tape owns
/// shared references to every tensor its closures read, which keeps one
/// step's activations alive exactly as long as the tape.
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active();

    /// Appends one recorded op and stamps the output with its node id.
    /// `backward` must add this op's contribution into each tracked input's
    /// grad, reading the output's grad (guaranteed present when called).
    std::int64_t record(TensorPtr output, std::vector<TensorPtr> inputs,
                        std::function<void()> backward);

    std::size_t node_count() const { return nodes_.size(); }
    std::uint64_t generation() const { return gen_; }

    /// Reverse sweep from a scalar loss. Interior grads are reset first, so
    /// calling run_backward more than once on the same tape accumulates
    /// only into leaf (non-node-output) tensors.
    void run_backward(const TensorPtr& loss);

private:
    struct Node {
        TensorPtr output;
        std::vector<TensorPtr> inputs;
        std::function<void()> backward;
    };
    std::vector<Node> nodes_;
    Tape* prev_;
    std::uint64_t gen_;
};

/// True when gradient should flow into this tensor: it requires grad
/// itself, or it was produced by a node on the currently active tape.
bool tracks_grad(const TensorPtr& t);

/// Runs the active tape's reverse sweep from `loss`.
/// Throws UsageError when no tape is active or loss is not scalar.
void backward(const TensorPtr& loss);

}  // namespace hkt
