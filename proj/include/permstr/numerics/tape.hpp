// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "permstr/numerics/tensor.hpp"

namespace permstr::num {

// Records differentiable operations in execution order. A tape is confined
// to the thread that activated it; ops only record while a TapeScope is live
// on the calling thread.
class Tape {
 public:
  struct Node {
    std::string_view op;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::shared_ptr<TensorImpl> output;
    std::function<void()> backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape();

  void record(std::string_view op, std::vector<std::shared_ptr<TensorImpl>> inputs,
              const Tensor& output, std::function<void()> backward);

  // Seeds d(loss)/d(loss) = 1 and propagates in reverse recording order.
  // Intermediate gradients are reset first, so calling this twice on the
  // same forward accumulates into leaves exactly twice.
  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  std::span<const Node> nodes() const { return nodes_; }

  // The tape recording on this thread, or nullptr.
  static Tape* active();

 private:
  friend class TapeScope;
  std::vector<Node> nodes_;
};

class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;
  ~TapeScope();

 private:
  Tape* previous_;
};

// Suspends recording on this thread for its lifetime.
class NoGradScope {
 public:
  NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;
  ~NoGradScope();

 private:
  Tape* previous_;
};

// Free-function form of Tape::backward for the tape that produced `loss`.
void backward(const Tensor& loss);

}  // namespace permstr::num
