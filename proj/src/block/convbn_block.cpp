// Copyright 2026 The convbn Authors
// SPDX-License-Identifier: Apache-2.0

#include "convbn/convbn_block.hpp"

#include <cmath>
#include <string>

#include "convbn/errors.hpp"
#include "convbn/tensor_ops.hpp"

namespace convbn {
namespace {

// rows[o, ...] * coeff[o], through the shared kernel so every backend agrees.
Tensor scale_rows(const Tensor& rows, std::span<const double> coeff, DType dtype) {
  const auto channels = static_cast<std::size_t>(rows.dim(0));
  if (coeff.size() != channels) throw ShapeError("per-channel coefficient count mismatch");
  const std::size_t inner = channels ? rows.numel() / channels : 0;
  std::vector<double> zeros(channels, 0.0), out(rows.numel());
  kernels::active().channel_affine(rows.data(), zeros.data(), coeff.data(), zeros.data(), out.data(),
                                   1, channels, inner);
  return Tensor(rows.shape(), std::move(out), dtype);
}

void check_channels(const Tensor& weight, const Tensor& v, const char* what) {
  if (v.shape() != Shape{weight.dim(0)}) {
    throw ShapeError(std::string(what) + " shape " + v.shape().str() +
                     " does not match C_out of weight " + weight.shape().str());
  }
}

void require_mode(const SavedForBackward& saved, Mode mode) {
  if (saved.mode != mode) {
    throw ModeError("saved tensors come from " + std::string(mode_name(saved.mode)) +
                    " forward but backward runs in " + std::string(mode_name(mode)) + " mode");
  }
}

nn::ConvParams with_weights(const nn::ConvParams& conv, Tensor weight, std::optional<Tensor> bias) {
  nn::ConvParams p = conv;
  p.weight = std::move(weight);
  p.bias = std::move(bias);
  return p;
}

}  // namespace

std::string_view mode_name(Mode mode) {
  switch (mode) {
    case Mode::Train: return "train";
    case Mode::Eval: return "eval";
    case Mode::Tune: return "tune";
    case Mode::Deploy: return "deploy";
  }
  return "?";
}

Mode parse_mode(std::string_view name) {
  if (name == "train") return Mode::Train;
  if (name == "eval") return Mode::Eval;
  if (name == "tune") return Mode::Tune;
  if (name == "deploy") return Mode::Deploy;
  throw InputError("unknown mode '" + std::string(name) + "' (expected train|eval|tune|deploy)");
}

TuneBuffers make_tune_buffers(const Tensor& running_mean, const Tensor& running_var, double eps) {
  if (running_mean.shape() != running_var.shape() || running_mean.rank() != 1) {
    throw ShapeError("running statistics must be matching [C] vectors");
  }
  const Tensor coeff = rsqrt(add(running_var, Tensor::scalar(eps, running_var.dtype())));
  return {coeff.reshape(Shape{running_var.dim(0), 1, 1, 1}), scale(running_mean, -1.0)};
}

FusedParams fuse_with_buffers(const Tensor& weight, const std::optional<Tensor>& bias,
                              const Tensor& gamma, const Tensor& beta, const TuneBuffers& buffers) {
  check_channels(weight, gamma, "gamma");
  check_channels(weight, beta, "beta");
  check_channels(weight, buffers.bias_delta, "bias_delta");
  if (bias) check_channels(weight, *bias, "conv bias");
  const auto channels = static_cast<std::size_t>(weight.dim(0));
  std::vector<double> coeff(channels);
  for (std::size_t o = 0; o < channels; ++o) coeff[o] = buffers.weight_coeff[o] * gamma[o];

  const DType dt = promote(weight.dtype(), gamma.dtype());
  const Tensor b = bias ? *bias : Tensor::zeros(Shape{weight.dim(0)}, weight.dtype());
  std::vector<double> fused_b(channels);
  kernels::active().channel_affine(b.data(), buffers.bias_delta.data(), coeff.data(), beta.data(),
                                   fused_b.data(), 1, channels, 1);
  return {scale_rows(weight, coeff, dt), Tensor(Shape{weight.dim(0)}, std::move(fused_b), dt)};
}

FusedParams fuse_params(const Tensor& weight, const std::optional<Tensor>& bias,
                        const Tensor& gamma, const Tensor& beta, const Tensor& running_mean,
                        const Tensor& running_var, double eps) {
  check_channels(weight, running_mean, "running_mean");
  check_channels(weight, running_var, "running_var");
  return fuse_with_buffers(weight, bias, gamma, beta, make_tune_buffers(running_mean, running_var, eps));
}

const Tensor& SavedForBackward::get(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) {
    throw ModeError("saved tensor '" + name + "' missing for " + std::string(mode_name(mode)) +
                    " backward");
  }
  return it->second;
}

std::vector<std::string> SavedForBackward::names() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : tensors) out.push_back(name);
  return out;
}

// ---- per-mode computations ---------------------------------------------------

BlockForward train_forward(const Tensor& x, const nn::ConvParams& conv, const nn::BNParams& bn) {
  const Tensor y = nn::conv2d_forward(x, conv);
  auto r = nn::bn_train_forward(y, bn);
  BlockForward out{std::move(r.z), {Mode::Train, {}}, std::move(r.running)};
  out.saved.tensors = {{"X", x},
                       {"xhat", std::move(r.xhat)},
                       {"batch_mean", std::move(r.stats.mean)},
                       {"batch_var", std::move(r.stats.var)}};
  return out;
}

BlockGrads train_backward(const SavedForBackward& saved, const Tensor& dz, const nn::ConvParams& conv,
                          const nn::BNParams& bn) {
  require_mode(saved, Mode::Train);
  const nn::BatchStats stats{saved.get("batch_mean"), saved.get("batch_var")};
  auto g = nn::bn_train_backward_from_xhat(dz, saved.get("xhat"), stats, bn);
  auto cg = nn::conv2d_backward(saved.get("X"), conv, g.dy);
  return {std::move(cg.dx), std::move(cg.dweight), std::move(cg.dbias), std::move(g.dgamma),
          std::move(g.dbeta)};
}

BlockForward eval_forward(const Tensor& x, const nn::ConvParams& conv, const nn::BNParams& bn) {
  Tensor y = nn::conv2d_forward(x, conv);
  Tensor z = nn::bn_eval_forward(y, bn);
  return {std::move(z), {Mode::Eval, {{"X", x}, {"Y", std::move(y)}}}, std::nullopt};
}

BlockGrads eval_backward(const SavedForBackward& saved, const Tensor& dz, const nn::ConvParams& conv,
                         const nn::BNParams& bn) {
  require_mode(saved, Mode::Eval);
  auto g = nn::bn_eval_backward(dz, saved.get("Y"), bn);
  auto cg = nn::conv2d_backward(saved.get("X"), conv, g.dy);
  return {std::move(cg.dx), std::move(cg.dweight), std::move(cg.dbias), std::move(g.dgamma),
          std::move(g.dbeta)};
}

BlockForward tune_forward(const Tensor& x, const nn::ConvParams& conv, const Tensor& gamma,
                          const Tensor& beta, const TuneBuffers& buffers) {
  auto fused = fuse_with_buffers(conv.weight, conv.bias, gamma, beta, buffers);
  const auto p = with_weights(conv, fused.weight, fused.bias);
  Tensor z = nn::conv2d_forward(x, p);
  return {std::move(z),
          {Mode::Tune,
           {{"X", x}, {"weight_fused", std::move(fused.weight)}, {"bias_fused", std::move(fused.bias)}}},
          std::nullopt};
}

BlockGrads tune_backward(const SavedForBackward& saved, const Tensor& dz, const nn::ConvParams& conv,
                         const Tensor& gamma, const TuneBuffers& buffers) {
  require_mode(saved, Mode::Tune);
  const Tensor& x = saved.get("X");
  const auto fused = with_weights(conv, saved.get("weight_fused"), saved.get("bias_fused"));
  const Tensor dweight_fused = nn::conv2d_backward_weight(x, fused, dz);
  Tensor dx = nn::conv2d_backward_data(x.shape(), fused, dz);
  const Tensor dz_sum = nn::channel_sum(dz);

  const auto channels = static_cast<std::size_t>(conv.weight.dim(0));
  const std::size_t per_out = conv.weight.numel() / channels;
  const auto& k = kernels::active();
  std::vector<double> coeff(channels), dbias(channels), dgamma(channels);
  for (std::size_t o = 0; o < channels; ++o) {
    const double wc = buffers.weight_coeff[o];
    coeff[o] = wc * gamma[o];
    dbias[o] = coeff[o] * dz_sum[o];
    const double b = conv.bias ? (*conv.bias)[o] : 0.0;
    const double weight_term =
        k.dot(dweight_fused.data() + o * per_out, conv.weight.data() + o * per_out, per_out) * wc;
    dgamma[o] = weight_term + dz_sum[o] * (b + buffers.bias_delta[o]) * wc;
  }
  const DType dt = promote(dz.dtype(), conv.weight.dtype());
  const Shape cs{conv.weight.dim(0)};
  return {std::move(dx), scale_rows(dweight_fused, coeff, dt), Tensor(cs, std::move(dbias), dt),
          Tensor(cs, std::move(dgamma), dt), dz_sum.to(dt)};
}

BlockForward deploy_forward(const Tensor& x, const nn::ConvParams& fused) {
  Tensor z = nn::conv2d_forward(x, fused);
  return {std::move(z), {Mode::Deploy, {{"X", x}}}, std::nullopt};
}

BlockGrads deploy_backward(const SavedForBackward& saved, const Tensor& dz, const nn::ConvParams& fused) {
  require_mode(saved, Mode::Deploy);
  auto cg = nn::conv2d_backward(saved.get("X"), fused, dz);
  return {std::move(cg.dx), std::move(cg.dweight), std::move(cg.dbias), std::nullopt, std::nullopt};
}

// ---- ConvBnBlock ----------------------------------------------------------------

ConvBnBlock::ConvBnBlock(nn::ConvParams conv, nn::BNParams bn, Mode mode)
    : conv_(std::move(conv)), bn_(std::move(bn)), mode_(Mode::Eval) {
  if (conv_.weight.rank() != 4) throw ShapeError("conv weight must be [C_out, C_in, k_h, k_w]");
  check_channels(conv_.weight, bn_->gamma, "gamma");
  check_channels(conv_.weight, bn_->beta, "beta");
  check_channels(conv_.weight, bn_->running_mean, "running_mean");
  check_channels(conv_.weight, bn_->running_var, "running_var");
  if (conv_.bias) check_channels(conv_.weight, *conv_.bias, "conv bias");
  if (!(bn_->eps > 0.0)) throw DomainError("batch-norm eps must be positive");
  if (!(bn_->momentum > 0.0 && bn_->momentum < 1.0)) throw DomainError("batch-norm momentum must lie in (0, 1)");
  set_mode(mode);
}

void ConvBnBlock::set_mode(Mode mode) {
  if (mode == mode_ && (mode != Mode::Tune || buffers_)) return;
  if (mode_ == Mode::Deploy) {
    // Leave Deploy: restore or invert the fusion.
    const DeploySnapshot& snap = *snapshot_;
    const bool untouched = bitwise_equal(conv_.weight, snap.fused_at_switch.weight) &&
                           conv_.bias && bitwise_equal(*conv_.bias, snap.fused_at_switch.bias);
    if (untouched) {
      conv_.weight = snap.weight;
      conv_.bias = snap.bias;
    } else {
      const auto channels = static_cast<std::size_t>(conv_.weight.dim(0));
      const auto buffers = make_tune_buffers(snap.bn.running_mean, snap.bn.running_var, snap.bn.eps);
      std::vector<double> inv_coeff(channels), b(channels);
      for (std::size_t o = 0; o < channels; ++o) {
        const double c = buffers.weight_coeff[o] * snap.bn.gamma[o];
        if (c == 0.0) throw ModeError("cannot unfuse channel " + std::to_string(o) + " with zero scale");
        inv_coeff[o] = 1.0 / c;
        b[o] = ((*conv_.bias)[o] - snap.bn.beta[o]) / c - buffers.bias_delta[o];
      }
      conv_.weight = scale_rows(conv_.weight, inv_coeff, conv_.weight.dtype());
      conv_.bias = Tensor(Shape{conv_.weight.dim(0)}, std::move(b), conv_.weight.dtype());
    }
    bn_ = snap.bn;
    snapshot_.reset();
    mode_ = Mode::Eval;
  }
  buffers_.reset();
  switch (mode) {
    case Mode::Train:
    case Mode::Eval:
      break;
    case Mode::Tune:
      buffers_ = make_tune_buffers(bn_->running_mean, bn_->running_var, bn_->eps);
      break;
    case Mode::Deploy: {
      auto fused = fuse_params(conv_.weight, conv_.bias, bn_->gamma, bn_->beta, bn_->running_mean,
                               bn_->running_var, bn_->eps);
      snapshot_ = DeploySnapshot{conv_.weight, conv_.bias, *bn_, fused};
      conv_.weight = fused.weight;
      conv_.bias = fused.bias;
      bn_.reset();
      break;
    }
  }
  mode_ = mode;
}

BlockForward ConvBnBlock::forward(const Tensor& x) const {
  switch (mode_) {
    case Mode::Train: return train_forward(x, conv_, *bn_);
    case Mode::Eval: return eval_forward(x, conv_, *bn_);
    case Mode::Tune: return tune_forward(x, conv_, bn_->gamma, bn_->beta, *buffers_);
    case Mode::Deploy: return deploy_forward(x, conv_);
  }
  throw ModeError("unknown mode");
}

BlockGrads ConvBnBlock::backward(const SavedForBackward& saved, const Tensor& dz) const {
  switch (mode_) {
    case Mode::Train: return train_backward(saved, dz, conv_, *bn_);
    case Mode::Eval: return eval_backward(saved, dz, conv_, *bn_);
    case Mode::Tune: return tune_backward(saved, dz, conv_, bn_->gamma, *buffers_);
    case Mode::Deploy: return deploy_backward(saved, dz, conv_);
  }
  throw ModeError("unknown mode");
}

Tensor ConvBnBlock::scaling_coefficients() const {
  if (!bn_) throw ModeError("scaling coefficients were consumed by Deploy fusion");
  return mul(bn_->gamma, rsqrt(add(bn_->running_var, Tensor::scalar(bn_->eps, bn_->running_var.dtype()))));
}

FusedParams ConvBnBlock::effective_params() const {
  if (mode_ == Mode::Deploy) return {conv_.weight, *conv_.bias};
  return fuse_params(conv_.weight, conv_.bias, bn_->gamma, bn_->beta, bn_->running_mean,
                     bn_->running_var, bn_->eps);
}

void ConvBnBlock::set_conv_weight(Tensor weight) {
  if (weight.shape() != conv_.weight.shape()) throw ShapeError("conv weight shape cannot change");
  conv_.weight = std::move(weight);
}

void ConvBnBlock::set_conv_bias(std::optional<Tensor> bias) {
  if (bias) check_channels(conv_.weight, *bias, "conv bias");
  if (mode_ == Mode::Deploy && !bias) throw ModeError("a Deploy block always carries a fused bias");
  conv_.bias = std::move(bias);
}

void ConvBnBlock::set_gamma(Tensor gamma) {
  if (!bn_) throw ModeError("gamma was consumed by Deploy fusion");
  check_channels(conv_.weight, gamma, "gamma");
  bn_->gamma = std::move(gamma);
}

void ConvBnBlock::set_beta(Tensor beta) {
  if (!bn_) throw ModeError("beta was consumed by Deploy fusion");
  check_channels(conv_.weight, beta, "beta");
  bn_->beta = std::move(beta);
}

void ConvBnBlock::set_running(nn::RunningStats running) {
  if (mode_ != Mode::Train && mode_ != Mode::Eval) {
    throw ModeError("running statistics are frozen in " + std::string(mode_name(mode_)) + " mode");
  }
  check_channels(conv_.weight, running.mean, "running_mean");
  check_channels(conv_.weight, running.var, "running_var");
  bn_->running_mean = std::move(running.mean);
  bn_->running_var = std::move(running.var);
}

TensorMap ConvBnBlock::to_tensors() const {
  if (!bn_) throw ModeError("a Deploy block has no batch-norm parameters to serialize");
  TensorMap out{{"conv.weight", conv_.weight},
                {"bn.gamma", bn_->gamma},
                {"bn.beta", bn_->beta},
                {"bn.running_mean", bn_->running_mean},
                {"bn.running_var", bn_->running_var},
                {"bn.eps", Tensor::scalar(bn_->eps)},
                {"bn.momentum", Tensor::scalar(bn_->momentum)}};
  if (conv_.bias) out.emplace("conv.bias", *conv_.bias);
  return out;
}

ConvBnBlock ConvBnBlock::from_tensors(const TensorMap& tensors, nn::Pair stride, nn::Pair padding,
                                      Mode mode) {
  auto need = [&](const std::string& name) -> const Tensor& {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw InputError("block tensors missing '" + name + "'");
    return it->second;
  };
  nn::ConvParams conv{need("conv.weight"), std::nullopt, stride, padding};
  if (auto it = tensors.find("conv.bias"); it != tensors.end()) conv.bias = it->second;
  nn::BNParams bn{need("bn.gamma"), need("bn.beta"), need("bn.running_mean"), need("bn.running_var")};
  if (auto it = tensors.find("bn.eps"); it != tensors.end()) bn.eps = it->second[0];
  if (auto it = tensors.find("bn.momentum"); it != tensors.end()) bn.momentum = it->second[0];
  return ConvBnBlock(std::move(conv), std::move(bn), mode);
}

}  // namespace convbn
