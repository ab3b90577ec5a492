#ifndef QSATTN_ATTENTION_HPP
#define QSATTN_ATTENTION_HPP

#include <numeric>

#include "qsattn/feature_map.hpp"
#include "qsattn/tensor_nn.hpp"

namespace qsattn {

// Largest HW for which the dense HW x HW global matrix is allowed; larger
// maps must go through local attention or average pooling.
inline constexpr Index kGlobalAttentionBudget = 4096;

enum class AttentionKind { Global, Local };

// Row-stochastic similarity matrix: one row per query location, K = HW for
// global or w*w for local.
template <std::floating_point S>
struct AttentionMatrix {
  AttentionKind kind = AttentionKind::Global;
  Index window = 0;  // Local only
  Tensor<S> rows;    // [HW, K]

  Index hw() const { return rows.dim(0); }
  Index keys() const { return rows.dim(1); }
};

// Queries and keys are the raw encoder features; logits are plain dot
// products without the 1/sqrt(C) temperature.
template <std::floating_point S>
AttentionMatrix<S> global_attention(const FeatureMap<S>& f, Index hw_budget = kGlobalAttentionBudget) {
  if (f.hw() > hw_budget)
    throw ResourceError("global attention on HW=" + std::to_string(f.hw()) + " exceeds budget " +
                        std::to_string(hw_budget) + "; use local attention or average pooling");
  Tensor<S> q = f.rows();                       // [HW, C]
  Tensor<S> logits = matmul(q, transpose(q));   // [HW, HW]
  AttentionMatrix<S> a;
  a.kind = AttentionKind::Global;
  a.rows = softmax_rows(logits);
  return a;
}

template <std::floating_point S>
AttentionMatrix<S> local_attention(const FeatureMap<S>& f, Index window) {
  if (window < 1 || window % 2 == 0)
    throw ConfigError("local attention window must be odd, got " + std::to_string(window));
  Tensor<S> unf = unfold(f.chw, window);        // [HW, w*w, C]
  Tensor<S> q = f.rows();                       // [HW, C]
  Tensor<S> logits = local_logits(unf, q);      // [HW, w*w]
  AttentionMatrix<S> a;
  a.kind = AttentionKind::Local;
  a.window = window;
  a.rows = softmax_rows(logits);
  return a;
}

// Per-row Shannon entropy in nats, 0*log(0) masked to 0.
template <std::floating_point S>
Tensor<S> row_entropy(const AttentionMatrix<S>& a) {
  return entropy_rows(a.rows);
}

// Max-mean significance score per query, on 1/sqrt(C)-scaled similarities.
// Higher is more distinct, so callers select in descending order.
template <std::floating_point S>
Tensor<S> informer_measure(const FeatureMap<S>& f) {
  Tensor<S> q = f.rows();
  Tensor<S> sims = mul_scalar(matmul(q, transpose(q)), S(1) / std::sqrt(static_cast<S>(f.channels())));
  return sub(max_rows(sims), mean_rows(sims));
}

enum class Strategy { Global, Local, LocalGlobal, InformerGlobal, Random };
enum class Routing { CrossDomain, SelfDomain, NoRouting };

struct SelectionStrategy {
  Strategy strategy = Strategy::Global;
  Index window = 9;  // Local / LocalGlobal
  Routing routing = Routing::CrossDomain;
};

inline const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::Global: return "global";
    case Strategy::Local: return "local";
    case Strategy::LocalGlobal: return "local-global";
    case Strategy::InformerGlobal: return "informer";
    case Strategy::Random: return "random";
  }
  return "?";
}

inline const char* routing_name(Routing r) {
  switch (r) {
    case Routing::CrossDomain: return "cross";
    case Routing::SelfDomain: return "self";
    case Routing::NoRouting: return "none";
  }
  return "?";
}

// The N chosen query rows: spatial indices, their significance scores, and
// the reduced routing matrix. a_qs is a constant for downstream gradients.
template <std::floating_point S>
struct SelectionResult {
  std::vector<Index> indices;
  std::vector<S> scores;
  Tensor<S> a_qs;  // [N, K]
  AttentionKind kind = AttentionKind::Global;
  Index window = 0;
};

namespace detail {

// Stable argsort: ascending score with ascending-index tie break, or
// descending score with ascending-index tie break.
template <std::floating_point S>
std::vector<Index> argsort_scores(const std::vector<S>& scores, bool descending) {
  std::vector<Index> order(scores.size());
  std::iota(order.begin(), order.end(), Index(0));
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    const S sa = scores[static_cast<size_t>(a)], sb = scores[static_cast<size_t>(b)];
    return descending ? sa > sb : sa < sb;
  });
  return order;
}

}  // namespace detail

// Scores every query of the source-side feature map and keeps n of them.
// The whole computation is gradient-free: the reduced matrix acts as a
// constant when routing values.
template <std::floating_point S>
SelectionResult<S> select_queries(const FeatureMap<S>& f_source, const SelectionStrategy& strategy, Index n,
                                  Rng& rng) {
  const Index hw = f_source.hw();
  if (n < 1 || n > hw)
    throw ConfigError("select_queries: n=" + std::to_string(n) + " outside [1, HW=" + std::to_string(hw) + "]");

  NoGradGuard no_grad;
  FeatureMap<S> f(detach(f_source.chw), f_source.layer_id, f_source.domain);

  SelectionResult<S> sel;
  std::vector<S> all_scores;
  std::vector<Index> order;
  Tensor<S> routing_rows;  // [HW, K] matrix the reduced rows come from

  switch (strategy.strategy) {
    case Strategy::Global: {
      AttentionMatrix<S> ag = global_attention(f);
      all_scores = row_entropy(ag).data();
      order = detail::argsort_scores(all_scores, false);
      routing_rows = ag.rows;
      sel.kind = AttentionKind::Global;
      break;
    }
    case Strategy::Local: {
      AttentionMatrix<S> al = local_attention(f, strategy.window);
      all_scores = row_entropy(al).data();
      order = detail::argsort_scores(all_scores, false);
      routing_rows = al.rows;
      sel.kind = AttentionKind::Local;
      sel.window = strategy.window;
      break;
    }
    case Strategy::LocalGlobal: {
      AttentionMatrix<S> al = local_attention(f, strategy.window);
      all_scores = row_entropy(al).data();
      order = detail::argsort_scores(all_scores, false);
      routing_rows = global_attention(f).rows;
      sel.kind = AttentionKind::Global;
      break;
    }
    case Strategy::InformerGlobal: {
      all_scores = informer_measure(f).data();
      order = detail::argsort_scores(all_scores, true);
      routing_rows = global_attention(f).rows;
      sel.kind = AttentionKind::Global;
      break;
    }
    case Strategy::Random: {
      AttentionMatrix<S> ag = global_attention(f);
      order = rng.sample_without_replacement(hw, n);
      all_scores = row_entropy(ag).data();
      routing_rows = ag.rows;
      sel.kind = AttentionKind::Global;
      break;
    }
  }

  sel.indices.assign(order.begin(), order.begin() + static_cast<size_t>(n));
  sel.scores.reserve(static_cast<size_t>(n));
  for (Index i : sel.indices) sel.scores.push_back(all_scores[static_cast<size_t>(i)]);
  sel.a_qs = gather_rows(routing_rows, sel.indices);
  return sel;
}

template <std::floating_point S>
struct RoutedValues {
  Tensor<S> positives;   // [N,C] routed/gathered from the source-domain map
  Tensor<S> anchors;     // [N,C] routed/gathered from the target-domain map
  Tensor<S> value_pool;  // [HW,C] (global) or [N,w*w,C] (local), source side
};

namespace detail {

// Selected rows of an unfolded neighborhood tensor: [HW,K,C] -> [N,K,C].
template <std::floating_point S>
Tensor<S> gather_unfolded(const Tensor<S>& unf, const std::vector<Index>& indices) {
  const Index K = unf.dim(1), C = unf.dim(2);
  Tensor<S> flat = reshape(unf, {unf.dim(0), K * C});
  return reshape(gather_rows(flat, indices), {static_cast<Index>(indices.size()), K, C});
}

}  // namespace detail

// Applies the reduced attention matrix to value features. CrossDomain uses
// the one source-derived matrix on both domains; SelfDomain rebuilds a
// target-side matrix at the same row indices; NoRouting gathers raw features.
// Gradients flow through the value features only, never through a_qs.
template <std::floating_point S>
RoutedValues<S> route_values(const SelectionResult<S>& sel, const FeatureMap<S>& f_source,
                             const FeatureMap<S>& f_target, Routing routing) {
  check_aligned(f_source, f_target);
  RoutedValues<S> out;

  if (routing == Routing::NoRouting) {
    out.positives = gather_rows(f_source.rows(), sel.indices);
    out.anchors = gather_rows(f_target.rows(), sel.indices);
    out.value_pool = f_source.rows();
    return out;
  }

  if (sel.kind == AttentionKind::Global) {
    Tensor<S> vx = f_source.rows();
    Tensor<S> vy = f_target.rows();
    out.positives = matmul(sel.a_qs, vx);
    if (routing == Routing::CrossDomain) {
      out.anchors = matmul(sel.a_qs, vy);
    } else {
      Tensor<S> a_qs_y;
      {
        NoGradGuard no_grad;
        FeatureMap<S> ft(detach(f_target.chw), f_target.layer_id, f_target.domain);
        a_qs_y = gather_rows(global_attention(ft).rows, sel.indices);
      }
      out.anchors = matmul(a_qs_y, vy);
    }
    out.value_pool = vx;
    return out;
  }

  // Local kind: route within the unfolded w x w neighborhoods of the
  // selected locations.
  Tensor<S> unf_x = detail::gather_unfolded(unfold(f_source.chw, sel.window), sel.indices);
  Tensor<S> unf_y = detail::gather_unfolded(unfold(f_target.chw, sel.window), sel.indices);
  out.positives = local_route(sel.a_qs, unf_x);
  if (routing == Routing::CrossDomain) {
    out.anchors = local_route(sel.a_qs, unf_y);
  } else {
    Tensor<S> a_qs_y;
    {
      NoGradGuard no_grad;
      FeatureMap<S> ft(detach(f_target.chw), f_target.layer_id, f_target.domain);
      a_qs_y = gather_rows(local_attention(ft, sel.window).rows, sel.indices);
    }
    out.anchors = local_route(a_qs_y, unf_y);
  }
  out.value_pool = unf_x;
  return out;
}

// Average-pools a feature map down to target_hw x target_hw so global
// attention stays inside its memory budget on shallow taps.
template <std::floating_point S>
FeatureMap<S> pooled_all_layers(const FeatureMap<S>& f, Index target_hw) {
  if (target_hw < 1) throw ConfigError("pooled_all_layers: target side must be positive");
  const Index H = f.height(), W = f.width();
  if (H < target_hw || W < target_hw || H % target_hw != 0 || W % target_hw != 0)
    throw ConfigError("pooled_all_layers: map " + shape_str(f.chw.shape()) + " not divisible down to " +
                      std::to_string(target_hw) + "x" + std::to_string(target_hw));
  if (H == target_hw && W == target_hw) return f;
  return FeatureMap<S>(avg_pool2d(f.chw, H / target_hw, W / target_hw), f.layer_id, f.domain);
}

// `index,row,col,score` lines sorted ascending by score; feeds the CLI
// heat-map renderer.
template <std::floating_point S>
std::string selection_dump(const SelectionResult<S>& sel, Index map_width) {
  std::vector<size_t> order(sel.indices.size());
  std::iota(order.begin(), order.end(), size_t(0));
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (sel.scores[a] != sel.scores[b]) return sel.scores[a] < sel.scores[b];
    return sel.indices[a] < sel.indices[b];
  });
  std::ostringstream os;
  for (size_t k : order) {
    const Index idx = sel.indices[k];
    os << idx << "," << idx / map_width << "," << idx % map_width << "," << sel.scores[k] << "\n";
  }
  return os.str();
}

}  // namespace qsattn

#endif  // QSATTN_ATTENTION_HPP
