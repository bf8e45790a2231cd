#include "semicon/ops.hpp"

namespace semicon {

const char* kind_name(PrimitiveKind kind) {
  switch (kind) {
    case PrimitiveKind::kMatmul: return "matmul";
    case PrimitiveKind::kPointwiseLinear: return "pointwise-linear";
    case PrimitiveKind::kGroupedPointwiseLinear: return "grouped-pointwise-linear";
    case PrimitiveKind::kSoftmax: return "softmax-over-axis";
    case PrimitiveKind::kTanh: return "tanh";
    case PrimitiveKind::kRelu: return "relu";
    case PrimitiveKind::kHadamard: return "hadamard";
    case PrimitiveKind::kSignedSqrt: return "signed-sqrt";
    case PrimitiveKind::kBatchNorm: return "batch-norm";
    case PrimitiveKind::kGlobalAvgPool: return "global-average-pool";
    case PrimitiveKind::kResidualAdd: return "residual-add";
    case PrimitiveKind::kConcatChannels: return "concat-along-channel";
    case PrimitiveKind::kScale: return "scale-by-constant";
  }
  return "unknown";
}

}  // namespace semicon
