#ifndef QSATTN_NETS_HPP
#define QSATTN_NETS_HPP

#include <array>
#include <utility>

#include "qsattn/checkpoint.hpp"
#include "qsattn/feature_map.hpp"
#include "qsattn/tensor_nn.hpp"

namespace qsattn {

template <std::floating_point S>
using NamedTensorList = std::vector<std::pair<std::string, Tensor<S>>>;

namespace detail {

template <std::floating_point S>
Tensor<S> init_conv_weight(Shape shape, Rng& rng) {
  Tensor<S> w = Tensor<S>::randn(std::move(shape), rng, S(0), S(0.02));
  quantize_to_f32(w);
  w.set_requires_grad(true);
  return w;
}

template <std::floating_point S>
Tensor<S> init_const(Shape shape, S value) {
  Tensor<S> t = Tensor<S>::full(std::move(shape), value);
  t.set_requires_grad(true);
  return t;
}

}  // namespace detail

template <std::floating_point S>
struct Conv2dLayer {
  Tensor<S> w, b;
  Index stride = 1, pad = 1;
  PadMode mode = PadMode::Zero;

  Conv2dLayer() = default;
  Conv2dLayer(Index cin, Index cout, Index k, Index stride_, Index pad_, PadMode mode_, Rng& rng)
      : w(detail::init_conv_weight<S>({cout, cin, k, k}, rng)),
        b(detail::init_const<S>({cout}, S(0))),
        stride(stride_),
        pad(pad_),
        mode(mode_) {}

  Tensor<S> operator()(const Tensor<S>& x) const { return conv2d(x, w, b, stride, pad, mode); }

  void collect(const std::string& prefix, NamedTensorList<S>& out) {
    out.emplace_back(prefix + ".w", w);
    out.emplace_back(prefix + ".b", b);
  }
};

template <std::floating_point S>
struct ConvT2dLayer {
  Tensor<S> w, b;
  Index stride = 2, pad = 1, out_pad = 1;

  ConvT2dLayer() = default;
  ConvT2dLayer(Index cin, Index cout, Index k, Rng& rng)
      : w(detail::init_conv_weight<S>({cin, cout, k, k}, rng)), b(detail::init_const<S>({cout}, S(0))) {}

  Tensor<S> operator()(const Tensor<S>& x) const { return conv_transpose2d(x, w, b, stride, pad, out_pad); }

  void collect(const std::string& prefix, NamedTensorList<S>& out) {
    out.emplace_back(prefix + ".w", w);
    out.emplace_back(prefix + ".b", b);
  }
};

template <std::floating_point S>
struct InstanceNormLayer {
  Tensor<S> gamma, beta;

  InstanceNormLayer() = default;
  explicit InstanceNormLayer(Index c)
      : gamma(detail::init_const<S>({c}, S(1))), beta(detail::init_const<S>({c}, S(0))) {}

  Tensor<S> operator()(const Tensor<S>& x) const { return instance_norm(x, gamma, beta); }

  void collect(const std::string& prefix, NamedTensorList<S>& out) {
    out.emplace_back(prefix + ".g", gamma);
    out.emplace_back(prefix + ".b", beta);
  }
};

// conv-IN-ReLU-conv-IN with additive skip.
template <std::floating_point S>
struct ResBlock {
  Conv2dLayer<S> conv1, conv2;
  InstanceNormLayer<S> norm1, norm2;

  ResBlock() = default;
  ResBlock(Index c, Rng& rng)
      : conv1(c, c, 3, 1, 1, PadMode::Zero, rng),
        conv2(c, c, 3, 1, 1, PadMode::Zero, rng),
        norm1(c),
        norm2(c) {}

  Tensor<S> operator()(const Tensor<S>& x) const { return add(x, norm2(conv2(relu(norm1(conv1(x)))))); }

  void collect(const std::string& prefix, NamedTensorList<S>& out) {
    conv1.collect(prefix + ".conv1", out);
    norm1.collect(prefix + ".norm1", out);
    conv2.collect(prefix + ".conv2", out);
    norm2.collect(prefix + ".norm2", out);
  }
};

inline constexpr int kResBlocks = 9;
inline constexpr int kEncoderResBlocks = 5;  // encoder is the prefix ending at the fifth residual block

// ResNet translator: 7x7 stem, two stride-2 down blocks, nine residual
// blocks, two stride-2 transposed-conv up blocks, 7x7 output conv with Tanh.
// Feature taps: input image, both down-block outputs, residual blocks 1 and 5.
template <std::floating_point S>
class Generator {
 public:
  explicit Generator(Rng& rng, int base_channels = 64) : base_(base_channels) {
    const Index b = base_channels;
    stem_ = Conv2dLayer<S>(3, b, 7, 1, 3, PadMode::Reflect, rng);
    stem_norm_ = InstanceNormLayer<S>(b);
    down1_ = Conv2dLayer<S>(b, 2 * b, 3, 2, 1, PadMode::Zero, rng);
    down1_norm_ = InstanceNormLayer<S>(2 * b);
    down2_ = Conv2dLayer<S>(2 * b, 4 * b, 3, 2, 1, PadMode::Zero, rng);
    down2_norm_ = InstanceNormLayer<S>(4 * b);
    for (auto& blk : blocks_) blk = ResBlock<S>(4 * b, rng);
    up1_ = ConvT2dLayer<S>(4 * b, 2 * b, 3, rng);
    up1_norm_ = InstanceNormLayer<S>(2 * b);
    up2_ = ConvT2dLayer<S>(2 * b, b, 3, rng);
    up2_norm_ = InstanceNormLayer<S>(b);
    out_ = Conv2dLayer<S>(b, 3, 7, 1, 3, PadMode::Reflect, rng);
  }

  int base_channels() const { return base_; }

  Tensor<S> forward(const Tensor<S>& image, std::vector<FeatureMap<S>>* taps = nullptr,
                    Domain tap_domain = Domain::SourceReal) const {
    Tensor<S> r = encode_impl(image, taps, tap_domain);
    for (int i = kEncoderResBlocks; i < kResBlocks; ++i) r = blocks_[static_cast<size_t>(i)](r);
    Tensor<S> u = relu(up1_norm_(up1_(r)));
    u = relu(up2_norm_(up2_(u)));
    return tanh(out_(u));
  }

  // Encoder-only pass: the exact prefix of forward(), so taps recorded by
  // either path are identical.
  std::vector<FeatureMap<S>> encode(const Tensor<S>& image, Domain tap_domain) const {
    std::vector<FeatureMap<S>> taps;
    encode_impl(image, &taps, tap_domain);
    return taps;
  }

  NamedTensorList<S> named_parameters() {
    NamedTensorList<S> out;
    stem_.collect("G.stem", out);
    stem_norm_.collect("G.stem_norm", out);
    down1_.collect("G.down1", out);
    down1_norm_.collect("G.down1_norm", out);
    down2_.collect("G.down2", out);
    down2_norm_.collect("G.down2_norm", out);
    for (int i = 0; i < kResBlocks; ++i) blocks_[static_cast<size_t>(i)].collect("G.res" + std::to_string(i), out);
    up1_.collect("G.up1", out);
    up1_norm_.collect("G.up1_norm", out);
    up2_.collect("G.up2", out);
    up2_norm_.collect("G.up2_norm", out);
    out_.collect("G.out", out);
    return out;
  }

  Index parameter_count() {
    Index n = 0;
    for (auto& [name, t] : named_parameters()) n += t.numel();
    return n;
  }

  // Channel widths of the five taps, for sizing projection heads.
  std::array<Index, kTapCount> tap_channels() const {
    const Index b = base_;
    return {3, 2 * b, 4 * b, 4 * b, 4 * b};
  }

 private:
  Tensor<S> encode_impl(const Tensor<S>& image, std::vector<FeatureMap<S>>* taps, Domain tap_domain) const {
    if (image.rank() != 3 || image.dim(0) != 3)
      throw ShapeError("generator: input must be [3,H,W], got " + shape_str(image.shape()));
    if (image.dim(1) % 4 != 0 || image.dim(2) % 4 != 0)
      throw ConfigError("generator: spatial size " + shape_str(image.shape()) + " must be divisible by 4");
    if (taps) {
      taps->clear();
      taps->reserve(kTapCount);
      taps->emplace_back(image, 0, tap_domain);
    }
    Tensor<S> h = relu(stem_norm_(stem_(image)));
    h = relu(down1_norm_(down1_(h)));
    if (taps) taps->emplace_back(h, 1, tap_domain);
    h = relu(down2_norm_(down2_(h)));
    if (taps) taps->emplace_back(h, 2, tap_domain);
    for (int i = 0; i < kEncoderResBlocks; ++i) {
      h = blocks_[static_cast<size_t>(i)](h);
      if (taps && i == 0) taps->emplace_back(h, 3, tap_domain);
    }
    if (taps) taps->emplace_back(h, 4, tap_domain);
    return h;
  }

  int base_ = 64;
  Conv2dLayer<S> stem_, down1_, down2_, out_;
  InstanceNormLayer<S> stem_norm_, down1_norm_, down2_norm_, up1_norm_, up2_norm_;
  std::array<ResBlock<S>, kResBlocks> blocks_;
  ConvT2dLayer<S> up1_, up2_;
};

// PatchGAN: three stride-2 blocks then two stride-1 convs down to a
// one-channel spatial logit map. No output nonlinearity.
template <std::floating_point S>
class Discriminator {
 public:
  explicit Discriminator(Rng& rng, int base_channels = 64) : base_(base_channels) {
    const Index b = base_channels;
    c1_ = Conv2dLayer<S>(3, b, 4, 2, 1, PadMode::Zero, rng);
    c2_ = Conv2dLayer<S>(b, 2 * b, 4, 2, 1, PadMode::Zero, rng);
    n2_ = InstanceNormLayer<S>(2 * b);
    c3_ = Conv2dLayer<S>(2 * b, 4 * b, 4, 2, 1, PadMode::Zero, rng);
    n3_ = InstanceNormLayer<S>(4 * b);
    c4_ = Conv2dLayer<S>(4 * b, 8 * b, 4, 1, 1, PadMode::Zero, rng);
    n4_ = InstanceNormLayer<S>(8 * b);
    out_ = Conv2dLayer<S>(8 * b, 1, 4, 1, 1, PadMode::Zero, rng);
  }

  Tensor<S> forward(const Tensor<S>& image) const {
    if (image.rank() != 3 || image.dim(0) != 3)
      throw ShapeError("discriminator: input must be [3,H,W], got " + shape_str(image.shape()));
    if (image.dim(1) < kMinInput || image.dim(2) < kMinInput)
      throw ConfigError("discriminator: input " + shape_str(image.shape()) + " below the minimum side of " +
                        std::to_string(kMinInput));
    Tensor<S> h = leaky_relu(c1_(image), S(0.2));
    h = leaky_relu(n2_(c2_(h)), S(0.2));
    h = leaky_relu(n3_(c3_(h)), S(0.2));
    h = leaky_relu(n4_(c4_(h)), S(0.2));
    return out_(h);
  }

  NamedTensorList<S> named_parameters() {
    NamedTensorList<S> out;
    c1_.collect("D.c1", out);
    c2_.collect("D.c2", out);
    n2_.collect("D.n2", out);
    c3_.collect("D.c3", out);
    n3_.collect("D.n3", out);
    c4_.collect("D.c4", out);
    n4_.collect("D.n4", out);
    out_.collect("D.out", out);
    return out;
  }

  Index parameter_count() {
    Index n = 0;
    for (auto& [name, t] : named_parameters()) n += t.numel();
    return n;
  }

  // Smallest input side that still yields a non-empty logit map.
  static constexpr Index kMinInput = 24;

 private:
  int base_ = 64;
  Conv2dLayer<S> c1_, c2_, c3_, c4_, out_;
  InstanceNormLayer<S> n2_, n3_, n4_;
};

}  // namespace qsattn

#endif  // QSATTN_NETS_HPP
