#ifndef QSATTN_CONTRAST_HPP
#define QSATTN_CONTRAST_HPP

#include "qsattn/attention.hpp"
#include "qsattn/nets.hpp"

namespace qsattn {

inline constexpr Index kEmbedDim = 256;

// rng stream tags for the contrastive pipeline
inline constexpr uint64_t kTagSelect = 0x5153;
inline constexpr uint64_t kTagRandomIdx = 0x7261;
inline constexpr uint64_t kTagBranchX = 0x62a1;
inline constexpr uint64_t kTagBranchY = 0x62a2;

// Two-layer perceptron mapping a tap's channel width to the shared embedding
// dimension. One head per tap layer; they sit outside G and D.
template <std::floating_point S>
struct ProjectionHead {
  Tensor<S> w1, b1, w2, b2;

  ProjectionHead() = default;
  ProjectionHead(Index c_in, Rng& rng, Index dim = kEmbedDim)
      : w1(detail::init_conv_weight<S>({c_in, dim}, rng)),
        b1(detail::init_const<S>({dim}, S(0))),
        w2(detail::init_conv_weight<S>({dim, dim}, rng)),
        b2(detail::init_const<S>({dim}, S(0))) {}

  // rows: [N, C_in] -> [N, dim]
  Tensor<S> operator()(const Tensor<S>& rows) const {
    return add_rowvec(matmul(relu(add_rowvec(matmul(rows, w1), b1)), w2), b2);
  }

  void collect(const std::string& prefix, NamedTensorList<S>& out) {
    out.emplace_back(prefix + ".w1", w1);
    out.emplace_back(prefix + ".b1", b1);
    out.emplace_back(prefix + ".w2", w2);
    out.emplace_back(prefix + ".b2", b2);
  }
};

// Row-aligned anchor/positive embeddings; negatives for anchor i are
// positives[j != i]. Anchors carry gradient, positives never do.
template <std::floating_point S>
struct NceBatch {
  Tensor<S> anchors;    // [N, D]
  Tensor<S> positives;  // [N, D], detached
  S tau = S(0.07);
};

// Routed (or gathered) features -> projected, L2-normalized embeddings.
// The positive side is built without recording so it enters the loss as a
// constant; the anchor side stays on the tape.
template <std::floating_point S>
NceBatch<S> build_nce_batch(const SelectionResult<S>& sel, const FeatureMap<S>& f_real, const FeatureMap<S>& f_fake,
                            const ProjectionHead<S>& head, Routing routing, S tau) {
  RoutedValues<S> routed = route_values(sel, f_real, f_fake, routing);
  NceBatch<S> batch;
  batch.tau = tau;
  {
    NoGradGuard no_grad;
    batch.positives = l2_normalize_rows(head(detach(routed.positives)));
  }
  batch.anchors = l2_normalize_rows(head(routed.anchors));
  return batch;
}

// CUT-style variant for the taps without QS-Attn: the same random spatial
// indices gather raw features from both maps.
template <std::floating_point S>
NceBatch<S> build_nce_batch(const std::vector<Index>& indices, const FeatureMap<S>& f_real,
                            const FeatureMap<S>& f_fake, const ProjectionHead<S>& head, S tau) {
  check_aligned(f_real, f_fake);
  if (static_cast<Index>(indices.size()) > f_real.hw())
    throw ConfigError("build_nce_batch: " + std::to_string(indices.size()) + " samples exceed HW=" +
                      std::to_string(f_real.hw()) + " at tap " + std::to_string(f_real.layer_id));
  NceBatch<S> batch;
  batch.tau = tau;
  {
    NoGradGuard no_grad;
    batch.positives = l2_normalize_rows(head(gather_rows(detach(f_real.rows()), indices)));
  }
  batch.anchors = l2_normalize_rows(head(gather_rows(f_fake.rows(), indices)));
  return batch;
}

// Mean over anchors of -log[ exp(q.k+/tau) / (exp(q.k+/tau) + sum_j exp(q.k_j-/tau)) ].
template <std::floating_point S>
Tensor<S> nce_loss(const NceBatch<S>& batch) {
  if (batch.tau <= S(0)) throw ConfigError("nce_loss: temperature must be positive");
  detail::check_same_shape(batch.anchors, batch.positives, "nce_loss");
  const Index n = batch.anchors.dim(0);
  if (n < 2) throw ConfigError("nce_loss: need at least 2 anchors to form negatives, got " + std::to_string(n));
  Tensor<S> logits = mul_scalar(matmul(batch.anchors, transpose(batch.positives)), S(1) / batch.tau);
  return mean(sub(logsumexp_rows(logits), diag(logits)));
}

// Multi-layer patchwise contrastive loss: QS-Attn on the deep taps, shared
// random indices on the shallow ones, one projection head per tap.
template <std::floating_point S>
class PatchNce {
 public:
  PatchNce() = default;
  PatchNce(const std::array<Index, kTapCount>& tap_channels, S tau, Index n_queries, SelectionStrategy strategy,
           bool qs_all_layers, Rng& init_rng)
      : tau_(tau), n_queries_(n_queries), strategy_(strategy), qs_all_layers_(qs_all_layers) {
    for (int l = 0; l < kTapCount; ++l)
      heads_[static_cast<size_t>(l)] = ProjectionHead<S>(tap_channels[static_cast<size_t>(l)], init_rng);
  }

  static bool is_qs_layer(int layer) { return layer >= kTapCount - 2; }

  Tensor<S> loss(const std::vector<FeatureMap<S>>& real_taps, const std::vector<FeatureMap<S>>& fake_taps,
                 uint64_t seed, int64_t epoch, int64_t step, uint64_t branch_tag) const {
    if (static_cast<int>(real_taps.size()) != kTapCount || static_cast<int>(fake_taps.size()) != kTapCount)
      throw ShapeError("PatchNce: expected " + std::to_string(kTapCount) + " taps per side");
    const Index deep_side = real_taps.back().height();
    Tensor<S> total = Tensor<S>::scalar(S(0));
    for (int l = 0; l < kTapCount; ++l) {
      const auto& f_real = real_taps[static_cast<size_t>(l)];
      const auto& f_fake = fake_taps[static_cast<size_t>(l)];
      NceBatch<S> batch;
      if (is_qs_layer(l) || qs_all_layers_) {
        FeatureMap<S> fr = f_real, ff = f_fake;
        if (qs_all_layers_ && f_real.height() > deep_side) {
          fr = pooled_all_layers(f_real, deep_side);
          ff = pooled_all_layers(f_fake, deep_side);
        }
        Rng rng = Rng::derive(seed, {kTagSelect, branch_tag, static_cast<uint64_t>(epoch),
                                     static_cast<uint64_t>(step), static_cast<uint64_t>(l)});
        SelectionResult<S> sel = select_queries(fr, strategy_, n_queries_, rng);
        batch = build_nce_batch(sel, fr, ff, heads_[static_cast<size_t>(l)], strategy_.routing, tau_);
      } else {
        Rng rng = Rng::derive(seed, {kTagRandomIdx, branch_tag, static_cast<uint64_t>(epoch),
                                     static_cast<uint64_t>(step), static_cast<uint64_t>(l)});
        if (n_queries_ > f_real.hw())
          throw ConfigError("PatchNce: n_queries=" + std::to_string(n_queries_) + " exceeds HW=" +
                            std::to_string(f_real.hw()) + " at tap " + std::to_string(l));
        std::vector<Index> idx = rng.sample_without_replacement(f_real.hw(), n_queries_);
        batch = build_nce_batch(idx, f_real, f_fake, heads_[static_cast<size_t>(l)], tau_);
      }
      total = add(total, nce_loss(batch));
    }
    return mul_scalar(total, S(1) / static_cast<S>(kTapCount));
  }

  NamedTensorList<S> named_parameters() {
    NamedTensorList<S> out;
    for (int l = 0; l < kTapCount; ++l) heads_[static_cast<size_t>(l)].collect("H." + std::to_string(l), out);
    return out;
  }

  const ProjectionHead<S>& head(int layer) const { return heads_[static_cast<size_t>(layer)]; }
  S tau() const { return tau_; }
  Index n_queries() const { return n_queries_; }
  const SelectionStrategy& strategy() const { return strategy_; }

 private:
  std::array<ProjectionHead<S>, kTapCount> heads_;
  S tau_ = S(0.07);
  Index n_queries_ = 256;
  SelectionStrategy strategy_{};
  bool qs_all_layers_ = false;
};

// L_con^Y: run a real target-domain image through G and constrain G(I_y)
// against I_y, with I_y playing the source role for selection.
template <std::floating_point S>
Tensor<S> identity_branch(const Tensor<S>& i_y, const Generator<S>& g, const PatchNce<S>& nce, uint64_t seed,
                          int64_t epoch, int64_t step) {
  std::vector<FeatureMap<S>> taps_real;
  Tensor<S> fake = g.forward(i_y, &taps_real, Domain::TargetReal);
  std::vector<FeatureMap<S>> taps_fake = g.encode(fake, Domain::TargetIdentity);
  return nce.loss(taps_real, taps_fake, seed, epoch, step, kTagBranchY);
}

}  // namespace qsattn

#endif  // QSATTN_CONTRAST_HPP
