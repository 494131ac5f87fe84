// SPDX-License-Identifier: Apache-2.0
#include "permstr/numerics/tape.hpp"

#include <algorithm>

namespace permstr::num {

namespace {
thread_local Tape* g_active = nullptr;
}  // namespace

Tape::~Tape() {
  // Outputs may outlive the tape through user handles; unlink them.
  for (auto& node : nodes_) {
    if (node.output->tape == this) {
      node.output->tape = nullptr;
    }
  }
}

Tape* Tape::active() { return g_active; }

void Tape::record(std::string_view op, std::vector<std::shared_ptr<TensorImpl>> inputs,
                  const Tensor& output, std::function<void()> backward) {
  output.impl()->tape = this;
  output.impl()->node_index = nodes_.size();
  nodes_.push_back(Node{op, std::move(inputs), output.shared(), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " +
                        shape_string(loss.shape()));
  }
  if (loss.impl()->tape != this) {
    throw ContractError("backward: loss was not produced on this tape");
  }
  const std::size_t last = loss.impl()->node_index;
  for (std::size_t i = 0; i <= last; ++i) {
    auto& out = *nodes_[i].output;
    if (out.grad) {
      std::visit([](auto& g) { std::fill(g.begin(), g.end(), 0); }, *out.grad);
    }
  }
  dispatch(loss.dtype(), [&]<typename T>() { loss.impl()->grad_values<T>()[0] = T{1}; });
  for (std::size_t i = last + 1; i-- > 0;) {
    if (nodes_[i].output->grad) {
      nodes_[i].backward();
    }
  }
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active) { g_active = &tape; }

TapeScope::~TapeScope() { g_active = previous_; }

NoGradScope::NoGradScope() : previous_(g_active) { g_active = nullptr; }

NoGradScope::~NoGradScope() { g_active = previous_; }

void backward(const Tensor& loss) {
  auto* tape = const_cast<Tape*>(loss.impl()->tape);
  if (tape == nullptr) {
    throw ContractError("backward: loss is not on any tape");
  }
  tape->backward(loss);
}

}  // namespace permstr::num
