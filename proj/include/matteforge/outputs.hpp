#pragma once

#include "matteforge/tensor.hpp"

namespace matteforge {

/// The three predictions of one forward pass.
template <class T>
struct ModelOutputs {
  Tensor<T> s_p;      // (n,1,h/16,w/16) coarse semantics
  Tensor<T> d_p;      // (n,1,h,w) boundary detail matte
  Tensor<T> alpha_p;  // (n,1,h,w) fused alpha matte
};

}  // namespace matteforge
