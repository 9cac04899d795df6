#pragma once

// Autodiff internals shared between tensor.cpp and the fused loss ops in
// encoder.cpp. Not part of the public headers.

#include <cstdint>
#include <functional>
#include <vector>

#include "diffclone/tensor.hpp"

namespace diffclone {

struct Tensor::Impl {
    std::vector<int> shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::uint64_t graph_epoch = 0;  // epoch of last tape involvement

    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
};

namespace detail {

struct TapeRecord {
    const char* op;
    std::function<void()> backward;
};

struct Tape {
    std::vector<TapeRecord> records;
    // requires_grad tensors touched this epoch; backward() guarantees each
    // ends up with an allocated (possibly all-zero) gradient.
    std::vector<std::shared_ptr<Tensor::Impl>> participants;
    std::uint64_t epoch = 1;
    bool grad_enabled = true;
};

Tape& tape();

// True when ops should be recorded for these operands.
bool should_record(bool any_requires_grad);

// Marks an impl as belonging to the current live graph (write-locks it).
void mark_in_graph(const std::shared_ptr<Tensor::Impl>& impl);

void push_record(const char* op, std::function<void()> backward);

// Gradient buffer of an impl, allocated as zeros on first use.
std::vector<double>& grad_buf(Tensor::Impl& impl);

// Output gradient during backward: empty when the output never received
// any gradient, in which case the record can be skipped.
inline const std::vector<double>& out_grad(const Tensor::Impl& impl) { return impl.grad; }

struct TensorFactory;

Tensor make_tensor(std::vector<int> shape, std::vector<double> data, bool requires_grad);

}  // namespace detail

// Befriended accessor so implementation files can construct tensors around
// existing impls.
struct TensorAccess {
    static Tensor wrap(std::shared_ptr<Tensor::Impl> impl);
};

}  // namespace diffclone
