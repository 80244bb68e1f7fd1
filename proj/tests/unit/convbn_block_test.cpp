// Copyright 2026 The convbn Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "convbn/convbn_block.hpp"
#include "convbn/errors.hpp"
#include "convbn/tensor_ops.hpp"
#include "oracles.hpp"

namespace convbn {
namespace {

using nn::BNParams;
using nn::ConvParams;
using testing::RandomBlock;

Tensor one(double v) { return Tensor::full(Shape{1}, v); }

TEST(FuseParams, ScalarExample) {
  const double eps = 1e-5;
  const auto f = fuse_params(Tensor::full(Shape{1, 1, 1, 1}, 2.0), one(1.0), one(3.0), one(1.0), one(1.0),
                             one(4.0 - eps), eps);
  // c = 3 / 2: w' = 3, b' = (1 - 1) * 1.5 + 1 = 1.
  EXPECT_NEAR(f.weight[0], 3.0, 1e-15);
  EXPECT_NEAR(f.bias[0], 1.0, 1e-15);
}

TEST(FuseParams, IdentityAndZeroScale) {
  Rng rng(1);
  const Tensor w = rng.normal_tensor(Shape{3, 2, 3, 3});
  const Tensor b = rng.normal_tensor(Shape{3});
  const Tensor ones = Tensor::full(Shape{3}, 1.0), zeros = Tensor::zeros(Shape{3});
  const auto id = fuse_params(w, b, ones, zeros, zeros, Tensor::full(Shape{3}, 1.0 - 1e-5), 1e-5);
  EXPECT_LE(max_abs_diff(id.weight, w), 1e-15);
  EXPECT_LE(max_abs_diff(id.bias, b), 1e-15);
  const Tensor beta = rng.normal_tensor(Shape{3});
  const auto z = fuse_params(w, std::nullopt, zeros, beta, rng.normal_tensor(Shape{3}), ones, 1e-5);
  EXPECT_EQ(max_abs(z.weight), 0.0);
  EXPECT_TRUE(bitwise_equal(z.bias, beta));
  EXPECT_THROW(fuse_params(w, b, Tensor::full(Shape{2}, 1.0), zeros, zeros, ones, 1e-5), ShapeError);
}

ConvBnBlock make_block(const RandomBlock& r, Mode mode) { return ConvBnBlock(r.conv, r.bn, mode); }

TEST(ConvBnBlock, EvalTuneDeployForwardAgree) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const RandomBlock r = testing::random_block(rng);
    const Tensor ze = make_block(r, Mode::Eval).forward(r.x).z;
    const Tensor zt = make_block(r, Mode::Tune).forward(r.x).z;
    const Tensor zd = make_block(r, Mode::Deploy).forward(r.x).z;
    EXPECT_LE(max_abs_diff(ze, zt), 1e-11) << trial;
    EXPECT_LE(max_abs_diff(ze, zd), 1e-11) << trial;
    EXPECT_TRUE(bitwise_equal(zt, zd)) << "Tune and freshly fused Deploy share the transform";
  }
}

TEST(ConvBnBlock, IdentityNormalizationGivesPlainConv) {
  Rng rng(3);
  RandomBlock r = testing::random_block(rng);
  const auto c = r.conv.weight.dim(0);
  r.bn = BNParams{Tensor::full(Shape{c}, 1.0), Tensor::zeros(Shape{c}), Tensor::zeros(Shape{c}),
                  Tensor::full(Shape{c}, 1.0 - nn::kDefaultEps)};
  const Tensor y = nn::conv2d_forward(r.x, r.conv);
  for (Mode m : {Mode::Eval, Mode::Tune, Mode::Deploy})
    EXPECT_LE(max_abs_diff(make_block(r, m).forward(r.x).z, y), 1e-14) << mode_name(m);
}

TEST(ConvBnBlock, EvalTuneBackwardAgree) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const RandomBlock r = testing::random_block(rng);
    const auto eval = make_block(r, Mode::Eval), tune = make_block(r, Mode::Tune);
    const auto fe = eval.forward(r.x), ft = tune.forward(r.x);
    const Tensor dz = rng.normal_tensor(fe.z.shape());
    const auto ge = eval.backward(fe.saved, dz), gt = tune.backward(ft.saved, dz);
    EXPECT_LE(normwise_rel_diff(ge.dx, gt.dx), 1e-10) << trial;
    EXPECT_LE(normwise_rel_diff(ge.dweight, gt.dweight), 1e-10) << trial;
    EXPECT_LE(normwise_rel_diff(ge.dbias, gt.dbias), 1e-10) << trial;
    EXPECT_LE(normwise_rel_diff(*ge.dgamma, *gt.dgamma), 1e-10) << trial;
    EXPECT_LE(normwise_rel_diff(*ge.dbeta, *gt.dbeta), 1e-10) << trial;
  }
}

TEST(ConvBnBlock, ZeroUpstreamGivesZeroGradientsInEveryMode) {
  Rng rng(5);
  const RandomBlock r = testing::random_block(rng);
  for (Mode m : {Mode::Train, Mode::Eval, Mode::Tune, Mode::Deploy}) {
    RandomBlock rr = r;
    rr.x = rng.normal_tensor(Shape{2, r.x.dim(1), r.x.dim(2), r.x.dim(3)});
    const auto block = make_block(rr, m);
    const auto f = block.forward(rr.x);
    const auto g = block.backward(f.saved, Tensor::zeros(f.z.shape()));
    EXPECT_EQ(max_abs(g.dx) + max_abs(g.dweight) + max_abs(g.dbias), 0.0) << mode_name(m);
    if (g.dgamma) {
      EXPECT_EQ(max_abs(*g.dgamma) + max_abs(*g.dbeta), 0.0) << mode_name(m);
    }
  }
}

TEST(ConvBnBlock, DeployGradientIsEvalGradientOverC) {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const RandomBlock r = testing::random_block(rng);
    const auto eval = make_block(r, Mode::Eval), deploy = make_block(r, Mode::Deploy);
    const Tensor c = eval.scaling_coefficients();
    const auto fe = eval.forward(r.x), fd = deploy.forward(r.x);
    const Tensor dz = rng.normal_tensor(fe.z.shape());
    const auto ge = eval.backward(fe.saved, dz), gd = deploy.backward(fd.saved, dz);
    const auto cout = c.numel();
    const Tensor rescaled = mul(gd.dweight, c.reshape(Shape{static_cast<std::int64_t>(cout), 1, 1, 1}));
    EXPECT_LE(normwise_rel_diff(rescaled, ge.dweight), 1e-10) << trial;
    EXPECT_LE(normwise_rel_diff(mul(gd.dbias, c), ge.dbias), 1e-10) << trial;
    EXPECT_FALSE(gd.dgamma.has_value());
    EXPECT_LE(normwise_rel_diff(gd.dx, ge.dx), 1e-10) << trial;
  }
}

TEST(ConvBnBlock, BlockModesMatchFiniteDifferences) {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    RandomBlock r = testing::random_block(rng, 3, 6, false);
    r.x = rng.normal_tensor(Shape{2, r.x.dim(1), r.x.dim(2), r.x.dim(3)});
    for (Mode m : {Mode::Train, Mode::Eval, Mode::Tune, Mode::Deploy}) {
      const ConvBnBlock block = make_block(r, m);
      const auto f = block.forward(r.x);
      const Tensor rp = rng.normal_tensor(f.z.shape());
      const auto g = block.backward(f.saved, rp);
      auto loss = [&](auto mutate) {
        return [&, mutate](const Tensor& t) {
          ConvBnBlock b = block;
          mutate(b, t);
          return testing::loop_dot(rp, b.forward(r.x).z);
        };
      };
      auto loss_x = [&](const Tensor& t) { return testing::loop_dot(rp, block.forward(t).z); };
      EXPECT_LE(testing::grad_error(g.dx, testing::finite_difference(loss_x, r.x)), 1e-5) << mode_name(m);
      EXPECT_LE(testing::grad_error(g.dweight, testing::finite_difference(
                                                   loss([](ConvBnBlock& b, const Tensor& t) { b.set_conv_weight(t); }),
                                                   block.conv().weight)),
                1e-5)
          << mode_name(m);
      const Tensor fd_bias = testing::finite_difference(
          loss([](ConvBnBlock& b, const Tensor& t) { b.set_conv_bias(t); }), *block.conv().bias);
      if (m == Mode::Train) {
        // Batch-mean subtraction cancels the conv bias: both sides vanish.
        EXPECT_LE(max_abs(g.dbias), 1e-12);
        EXPECT_LE(max_abs(fd_bias), 1e-8);
      } else {
        EXPECT_LE(testing::grad_error(g.dbias, fd_bias), 1e-5) << mode_name(m);
      }
      if (m == Mode::Deploy) continue;
      EXPECT_LE(testing::grad_error(*g.dgamma, testing::finite_difference(
                                                   loss([](ConvBnBlock& b, const Tensor& t) { b.set_gamma(t); }),
                                                   block.bn()->gamma)),
                1e-5)
          << mode_name(m);
      EXPECT_LE(testing::grad_error(*g.dbeta, testing::finite_difference(
                                                  loss([](ConvBnBlock& b, const Tensor& t) { b.set_beta(t); }),
                                                  block.bn()->beta)),
                1e-5)
          << mode_name(m);
    }
  }
}

TEST(ConvBnBlock, SavedSetsPerMode) {
  Rng rng(8);
  RandomBlock r = testing::random_block(rng);
  r.x = rng.normal_tensor(Shape{2, r.x.dim(1), r.x.dim(2), r.x.dim(3)});
  using V = std::vector<std::string>;
  EXPECT_EQ(make_block(r, Mode::Eval).forward(r.x).saved.names(), (V{"X", "Y"}));
  EXPECT_EQ(make_block(r, Mode::Tune).forward(r.x).saved.names(), (V{"X", "bias_fused", "weight_fused"}));
  EXPECT_EQ(make_block(r, Mode::Deploy).forward(r.x).saved.names(), (V{"X"}));
  EXPECT_EQ(make_block(r, Mode::Train).forward(r.x).saved.names(), (V{"X", "batch_mean", "batch_var", "xhat"}));
  const auto f = make_block(r, Mode::Eval).forward(r.x);
  EXPECT_EQ(f.saved.get("X").storage_id(), r.x.storage_id());
}

TEST(ConvBnBlock, SavedModeMismatchIsRejected) {
  Rng rng(9);
  const RandomBlock r = testing::random_block(rng);
  const auto f = make_block(r, Mode::Eval).forward(r.x);
  EXPECT_THROW(make_block(r, Mode::Tune).backward(f.saved, f.z), ModeError);
}

TEST(ConvBnBlock, TuneLeavesStatisticsBitIdentical) {
  Rng rng(10);
  const RandomBlock r = testing::random_block(rng);
  ConvBnBlock block = make_block(r, Mode::Tune);
  for (int k = 0; k < 5; ++k) {
    const auto f = block.forward(r.x);
    const auto g = block.backward(f.saved, f.z);
    block.set_gamma(sub(block.bn()->gamma, scale(*g.dgamma, 1e-3)));
  }
  EXPECT_TRUE(bitwise_equal(block.bn()->running_mean, r.bn.running_mean));
  EXPECT_TRUE(bitwise_equal(block.bn()->running_var, r.bn.running_var));
  EXPECT_THROW(block.set_running({r.bn.running_mean, r.bn.running_var}), ModeError);
  // Buffers track the frozen statistics.
  const auto& buf = *block.tune_buffers();
  EXPECT_EQ(buf.weight_coeff.shape(), (Shape{r.bn.gamma.dim(0), 1, 1, 1}));
  for (std::size_t o = 0; o < buf.bias_delta.numel(); ++o) {
    EXPECT_EQ(buf.bias_delta[o], -r.bn.running_mean[o]);
    EXPECT_EQ(buf.weight_coeff[o], 1.0 / std::sqrt(r.bn.running_var[o] + r.bn.eps));
  }
}

TEST(ConvBnBlock, TrainForwardReturnsRunningStats) {
  Rng rng(11);
  RandomBlock r = testing::random_block(rng);
  r.x = rng.normal_tensor(Shape{2, r.x.dim(1), r.x.dim(2), r.x.dim(3)});
  const ConvBnBlock block = make_block(r, Mode::Train);
  const auto f = block.forward(r.x);
  ASSERT_TRUE(f.running.has_value());
  const auto ref = nn::bn_train_forward(nn::conv2d_forward(r.x, r.conv), r.bn);
  EXPECT_TRUE(bitwise_equal(f.running->mean, ref.running.mean));
  EXPECT_TRUE(bitwise_equal(block.bn()->running_mean, r.bn.running_mean));
}

TEST(ConvBnBlock, ScalingCoefficients) {
  const Tensor w = Tensor::zeros(Shape{2, 1, 1, 1});
  const double eps = 1e-5;
  BNParams bn{Tensor(Shape{2}, {1.0, 2.0}), Tensor::zeros(Shape{2}), Tensor::zeros(Shape{2}),
              Tensor::full(Shape{2}, 0.25 - eps), eps};
  ConvBnBlock block(ConvParams{w, std::nullopt}, bn);
  const Tensor c = block.scaling_coefficients();
  EXPECT_NEAR(c[0], 2.0, 1e-12);
  EXPECT_NEAR(c[1], 4.0, 1e-12);
  block.set_mode(Mode::Deploy);
  EXPECT_THROW(block.scaling_coefficients(), ModeError);
  EXPECT_EQ(block.bn(), nullptr);
  EXPECT_THROW(block.set_gamma(bn.gamma), ModeError);
}

TEST(ConvBnBlock, DeployRevertIsBitwise) {
  Rng rng(12);
  const RandomBlock r = testing::random_block(rng);
  ConvBnBlock block = make_block(r, Mode::Eval);
  const auto before = encode_tensors(block.to_tensors());
  block.set_mode(Mode::Deploy);
  block.set_mode(Mode::Tune);
  EXPECT_EQ(encode_tensors(block.to_tensors()), before);
  block.set_mode(Mode::Deploy);
  block.set_mode(Mode::Eval);
  EXPECT_EQ(encode_tensors(block.to_tensors()), before);
}

TEST(ConvBnBlock, LeavingDeployAfterUpdatesUnfuses) {
  Rng rng(13);
  const RandomBlock r = testing::random_block(rng);
  ConvBnBlock block = make_block(r, Mode::Deploy);
  const Tensor w2 = add(block.conv().weight, rng.normal_tensor(block.conv().weight.shape(), 0, 0.01));
  block.set_conv_weight(w2);
  const Tensor z_deploy = block.forward(r.x).z;
  block.set_mode(Mode::Eval);
  EXPECT_LE(max_abs_diff(block.forward(r.x).z, z_deploy), 1e-11);
  EXPECT_TRUE(bitwise_equal(block.bn()->running_var, r.bn.running_var));
}

TEST(ConvBnBlock, SerializationRoundTrip) {
  Rng rng(14);
  const RandomBlock r = testing::random_block(rng);
  const ConvBnBlock block = make_block(r, Mode::Eval);
  const TensorMap m = block.to_tensors();
  EXPECT_EQ(m.count("conv.weight") + m.count("bn.gamma") + m.count("bn.beta") + m.count("bn.running_mean") +
                m.count("bn.running_var"),
            5u);
  const ConvBnBlock back = ConvBnBlock::from_tensors(decode_tensors(encode_tensors(m)), r.conv.stride,
                                                     r.conv.padding, Mode::Tune);
  EXPECT_EQ(back.mode(), Mode::Tune);
  EXPECT_EQ(encode_tensors(back.to_tensors()), encode_tensors(m));
  EXPECT_THROW(ConvBnBlock::from_tensors({}, {1, 1}, {0, 0}), InputError);
}

TEST(ConvBnBlock, OneStepSgdUpdateRatioIsCSquared) {
  Rng rng(15);
  for (int trial = 0; trial < 20; ++trial) {
    RandomBlock r = testing::random_block(rng);
    const auto cout = r.conv.weight.dim(0);
    std::vector<double> target(static_cast<std::size_t>(cout));
    for (auto& c : target) c = std::exp(rng.uniform(std::log(0.1), std::log(10.0)));
    // gamma = c * sqrt(var + eps) gives the requested coefficients.
    std::vector<double> gamma(target.size());
    for (std::size_t o = 0; o < gamma.size(); ++o) gamma[o] = target[o] * std::sqrt(r.bn.running_var[o] + r.bn.eps);
    r.bn.gamma = Tensor(Shape{cout}, gamma);
    const ConvBnBlock eval = make_block(r, Mode::Eval);
    const ConvBnBlock deploy = make_block(r, Mode::Deploy);
    const Tensor c = eval.scaling_coefficients();
    const auto fe = eval.forward(r.x), fd = deploy.forward(r.x);
    const Tensor dz = rng.normal_tensor(fe.z.shape());
    const double lr = 1e-3;
    const Tensor dwe = eval.backward(fe.saved, dz).dweight;
    const Tensor dwd = deploy.backward(fd.saved, dz).dweight;
    const std::size_t per = r.conv.weight.numel() / static_cast<std::size_t>(cout);
    for (std::size_t o = 0; o < static_cast<std::size_t>(cout); ++o) {
      double num = 0, den = 0;
      for (std::size_t k = o * per; k < (o + 1) * per; ++k) {
        const double induced = c[o] * (-lr * dwe[k]);  // change in w' = c * w
        num += induced * (-lr * dwd[k]);
        den += (-lr * dwd[k]) * (-lr * dwd[k]);
      }
      if (den == 0.0) continue;
      EXPECT_NEAR(num / den, c[o] * c[o], 1e-8 * c[o] * c[o]) << trial << " channel " << o;
    }
  }
}

TEST(Mode, ParseAndName) {
  for (Mode m : {Mode::Train, Mode::Eval, Mode::Tune, Mode::Deploy}) EXPECT_EQ(parse_mode(mode_name(m)), m);
  EXPECT_THROW(parse_mode("fast"), InputError);
}

}  // namespace
}  // namespace convbn
