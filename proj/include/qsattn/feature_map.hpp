#ifndef QSATTN_FEATURE_MAP_HPP
#define QSATTN_FEATURE_MAP_HPP

#include "qsattn/tensor.hpp"

namespace qsattn {

// Which image a feature map was extracted from.
enum class Domain {
  SourceReal,      // I_x
  TargetFake,      // G(I_x)
  TargetReal,      // I_y
  TargetIdentity,  // G(I_y)
};

inline const char* domain_name(Domain d) {
  switch (d) {
    case Domain::SourceReal: return "source-real";
    case Domain::TargetFake: return "target-fake";
    case Domain::TargetReal: return "target-real";
    case Domain::TargetIdentity: return "target-identity";
  }
  return "?";
}

inline constexpr int kTapCount = 5;

// An encoder activation tagged with its tap index and origin domain.
// Stored channel-major ([C,H,W]) to match the conv stack; attention code
// views it as [HW,C] rows.
template <std::floating_point S>
struct FeatureMap {
  Tensor<S> chw;
  int layer_id = 0;
  Domain domain = Domain::SourceReal;

  FeatureMap() = default;
  FeatureMap(Tensor<S> tensor, int layer, Domain dom) : chw(std::move(tensor)), layer_id(layer), domain(dom) {
    if (chw.rank() != 3) throw ShapeError("feature map must be [C,H,W], got " + shape_str(chw.shape()));
    if (chw.dim(0) < 1 || chw.dim(1) < 1 || chw.dim(2) < 1)
      throw ShapeError("feature map with empty dimension: " + shape_str(chw.shape()));
    if (layer < 0 || layer >= kTapCount)
      throw ConfigError("feature map layer_id " + std::to_string(layer) + " outside [0," + std::to_string(kTapCount) + ")");
  }

  Index channels() const { return chw.dim(0); }
  Index height() const { return chw.dim(1); }
  Index width() const { return chw.dim(2); }
  Index hw() const { return height() * width(); }

  // [HW, C], row-major over spatial locations; participates in the tape.
  Tensor<S> rows() const { return chw_to_rows(chw); }
};

template <std::floating_point S>
void check_aligned(const FeatureMap<S>& a, const FeatureMap<S>& b) {
  if (a.chw.shape() != b.chw.shape() || a.layer_id != b.layer_id)
    throw ShapeError(std::string("feature maps not aligned: ") + shape_str(a.chw.shape()) + " layer " +
                     std::to_string(a.layer_id) + " vs " + shape_str(b.chw.shape()) + " layer " +
                     std::to_string(b.layer_id));
}

}  // namespace qsattn

#endif  // QSATTN_FEATURE_MAP_HPP
