// Copyright 2026 The convbn Authors
// SPDX-License-Identifier: Apache-2.0
//
// A convolution followed by batch normalization, run in one of four modes:
//
//   Train   conv, then BN with batch moments; running stats are updated.
//   Eval    conv, then BN with frozen running stats. Saves {X, Y}.
//   Tune    conv with (w', b') recomputed from live (w, b, gamma, beta) and
//           frozen stats on every call. Saves {X, w', b'}.
//   Deploy  conv with constant pre-fused (w', b'); BN is gone. Saves {X}.
//
// Eval and Tune compute the same function of (w, b, gamma, beta), so their
// gradients agree up to rounding. Deploy trains (w', b') directly, and its
// weight gradient is the Eval gradient divided by c = gamma / sqrt(var + eps).

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "convbn/nn_ops.hpp"
#include "convbn/tensor.hpp"
#include "convbn/tensor_io.hpp"

namespace convbn {

enum class Mode : std::uint8_t { Train, Eval, Tune, Deploy };

std::string_view mode_name(Mode mode);
Mode parse_mode(std::string_view name);

struct FusedParams {
  Tensor weight;  // [C_out, C_in, k_h, k_w]
  Tensor bias;    // [C_out]
};

/// w' = c * w and b' = (b - mean) * c + beta with c = gamma * rsqrt(var + eps).
/// An absent bias is treated as zeros.
FusedParams fuse_params(const Tensor& weight, const std::optional<Tensor>& bias,
                        const Tensor& gamma, const Tensor& beta, const Tensor& running_mean,
                        const Tensor& running_var, double eps);

/// Tune-mode buffers derived from frozen statistics.
struct TuneBuffers {
  Tensor weight_coeff;  // rsqrt(var + eps), shape [C_out, 1, 1, 1]
  Tensor bias_delta;    // -mean, shape [C_out]
};

TuneBuffers make_tune_buffers(const Tensor& running_mean, const Tensor& running_var, double eps);

/// The on-the-fly transform: coeff = weight_coeff * gamma,
/// w' = w * coeff, b' = (b + bias_delta) * coeff + beta.
FusedParams fuse_with_buffers(const Tensor& weight, const std::optional<Tensor>& bias,
                              const Tensor& gamma, const Tensor& beta, const TuneBuffers& buffers);

/// Tensors retained by forward for backward, keyed by name:
///   Train  X, xhat, batch_mean, batch_var
///   Eval   X, Y
///   Tune   X, weight_fused, bias_fused
///   Deploy X
struct SavedForBackward {
  Mode mode = Mode::Eval;
  std::map<std::string, Tensor> tensors;

  const Tensor& get(const std::string& name) const;
  std::vector<std::string> names() const;
};

struct BlockForward {
  Tensor z;
  SavedForBackward saved;
  std::optional<nn::RunningStats> running;  // Train only
};

/// dweight/dbias are with respect to (w, b) in Train/Eval/Tune and to
/// (w', b') in Deploy; dgamma/dbeta are absent in Deploy.
struct BlockGrads {
  Tensor dx;
  Tensor dweight;
  Tensor dbias;
  std::optional<Tensor> dgamma;
  std::optional<Tensor> dbeta;
};

// Per-mode computations over explicit parameters. The graph executor calls
// these directly; ConvBnBlock composes them.
BlockForward train_forward(const Tensor& x, const nn::ConvParams& conv, const nn::BNParams& bn);
BlockGrads train_backward(const SavedForBackward& saved, const Tensor& dz, const nn::ConvParams& conv,
                          const nn::BNParams& bn);
BlockForward eval_forward(const Tensor& x, const nn::ConvParams& conv, const nn::BNParams& bn);
BlockGrads eval_backward(const SavedForBackward& saved, const Tensor& dz, const nn::ConvParams& conv,
                         const nn::BNParams& bn);
BlockForward tune_forward(const Tensor& x, const nn::ConvParams& conv, const Tensor& gamma,
                          const Tensor& beta, const TuneBuffers& buffers);
BlockGrads tune_backward(const SavedForBackward& saved, const Tensor& dz, const nn::ConvParams& conv,
                         const Tensor& gamma, const TuneBuffers& buffers);
BlockForward deploy_forward(const Tensor& x, const nn::ConvParams& fused);
BlockGrads deploy_backward(const SavedForBackward& saved, const Tensor& dz, const nn::ConvParams& fused);

/// Pre-fusion state kept after switching to Deploy so the block can revert.
struct DeploySnapshot {
  Tensor weight;
  std::optional<Tensor> bias;
  nn::BNParams bn;
  FusedParams fused_at_switch;
};

class ConvBnBlock {
 public:
  ConvBnBlock(nn::ConvParams conv, nn::BNParams bn, Mode mode = Mode::Eval);

  Mode mode() const noexcept { return mode_; }
  /// In Deploy this holds the fused (w', b').
  const nn::ConvParams& conv() const noexcept { return conv_; }
  /// Null in Deploy: the BN parameters were consumed by fusion.
  const nn::BNParams* bn() const noexcept { return bn_ ? &*bn_ : nullptr; }
  const std::optional<TuneBuffers>& tune_buffers() const noexcept { return buffers_; }
  const std::optional<DeploySnapshot>& snapshot() const noexcept { return snapshot_; }

  /// Mode transitions. Entering Tune derives the buffers from the current
  /// statistics; entering Deploy fuses once and keeps a snapshot; leaving
  /// Deploy restores the snapshot bitwise if (w', b') were not modified,
  /// otherwise inverts the fusion algebraically.
  void set_mode(Mode mode);

  BlockForward forward(const Tensor& x) const;
  BlockGrads backward(const SavedForBackward& saved, const Tensor& dz) const;

  /// c = gamma / sqrt(var + eps); ModeError in Deploy.
  Tensor scaling_coefficients() const;
  /// (w', b') as Tune or Deploy would use them now.
  FusedParams effective_params() const;

  void set_conv_weight(Tensor weight);
  void set_conv_bias(std::optional<Tensor> bias);
  void set_gamma(Tensor gamma);
  void set_beta(Tensor beta);
  /// Running statistics only change in Train or Eval mode.
  void set_running(nn::RunningStats running);

  /// Reserved names: conv.weight, conv.bias, bn.gamma, bn.beta,
  /// bn.running_mean, bn.running_var, plus scalar bn.eps and bn.momentum.
  TensorMap to_tensors() const;
  static ConvBnBlock from_tensors(const TensorMap& tensors, nn::Pair stride, nn::Pair padding,
                                  Mode mode = Mode::Eval);

 private:
  nn::ConvParams conv_;
  std::optional<nn::BNParams> bn_;
  Mode mode_;
  std::optional<TuneBuffers> buffers_;
  std::optional<DeploySnapshot> snapshot_;
};

}  // namespace convbn
