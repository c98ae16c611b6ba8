#pragma once

// Scale-space invariant attention head: maps the five DoG layers of one
// octave to an importance mask in (0,1) that gates the matching multi-scale
// feature map.

#include "ssia/scale_space.hpp"
#include "ssia/tensor.hpp"

namespace ssia {

struct AttentionHead {
  Tensor conv1_w;  // (C_mid, 5*C_f, 3, 3)
  Tensor conv1_b;
  Tensor conv2_w;  // (C_f, C_mid, 3, 3); unused in single-conv mode
  Tensor conv2_b;
  bool single_conv = false;
};

// M_(s) = sigmoid(conv2(relu(conv1(concat of the octave's 5 DoG layers)))).
// In single-conv mode the second convolution is skipped and conv1 must map
// straight to C_f channels (mask range then collapses to [0.5, 1)).
inline Tensor attention_mask(const DoGPyramid& dog, int octave_index,
                             const AttentionHead& head) {
  const auto& layers = dog.diffs.at(octave_index);
  Tensor stack = layers[0];
  for (int l = 1; l < kDogLayers; ++l) stack = concat(stack, layers[l]);

  if (stack.shape().c != head.conv1_w.shape().c)
    throw shape_error("attention_mask: DoG stack channels " +
                      stack.shape().str() + " do not match head conv1 " +
                      head.conv1_w.shape().str());

  Tensor t = relu(conv2d(stack, head.conv1_w, head.conv1_b, 1, 1));
  if (!head.single_conv) t = conv2d(t, head.conv2_w, head.conv2_b, 1, 1);
  return sigmoid(t);
}

}  // namespace ssia
