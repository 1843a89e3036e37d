#include "pf/backbones/receptive_field.hpp"

namespace pf {

ReceptiveFieldInfo ReceptiveFieldInfo::then(const ReceptiveFieldInfo& inner) const {
  return {rf + (inner.rf - 1) * jump, jump * inner.jump, start + inner.start * static_cast<double>(jump)};
}

ReceptiveFieldInfo layer_receptive_field(const LayerKind& kind) {
  switch (kind.op) {
    case LayerOp::conv2d:
    case LayerOp::separable_conv2d:
    case LayerOp::maxpool2d:
      return {kind.kernel, kind.stride, (kind.kernel - 1) / 2.0 - kind.pad};
    case LayerOp::pointwise_conv:
    case LayerOp::batchnorm2d:
    case LayerOp::relu:
    case LayerOp::leaky_relu:
    case LayerOp::sigmoid:
    case LayerOp::residual_add:
      return {};
    case LayerOp::upsample_nearest:
    case LayerOp::dense:
      break;
  }
  throw StructuralError("no receptive field defined for " + kind.describe());
}

ReceptiveFieldInfo receptive_field(std::span<const LayerKind> layers) {
  ReceptiveFieldInfo acc;
  for (const auto& k : layers) acc = acc.then(layer_receptive_field(k));
  return acc;
}

ReceptiveFieldInfo receptive_field(const std::vector<PlanNode>& plan) {
  std::vector<ReceptiveFieldInfo> at(plan.size());
  auto input_of = [&](int i) { return i == Graph<float>::kInput ? ReceptiveFieldInfo{} : at[std::size_t(i)]; };
  for (std::size_t k = 0; k < plan.size(); ++k) {
    const auto& n = plan[k];
    if (n.kind.op == LayerOp::residual_add) {
      const auto a = input_of(n.inputs.at(0)), b = input_of(n.inputs.at(1));
      if (a.jump != b.jump || a.start != b.start)
        throw StructuralError("residual operands of '" + n.name + "' are not spatially aligned");
      at[k] = a.rf >= b.rf ? a : b;
    } else {
      at[k] = input_of(n.inputs.at(0)).then(layer_receptive_field(n.kind));
    }
  }
  return plan.empty() ? ReceptiveFieldInfo{} : at.back();
}

}  // namespace pf
