#include "pf/backbones/backbone.hpp"

namespace pf {

namespace {

class PlanBuilder {
 public:
  int add(const std::string& name, const LayerKind& kind, std::vector<int> inputs) {
    plan_.push_back({name, kind, std::move(inputs)});
    return static_cast<int>(plan_.size()) - 1;
  }
  int add(const std::string& name, const LayerKind& kind) { return add(name, kind, {last()}); }
  int last() const { return static_cast<int>(plan_.size()) - 1; }
  std::vector<PlanNode> take() { return std::move(plan_); }

 private:
  std::vector<PlanNode> plan_;
};

// Standard Xception block: a chain of (relu, separable conv, bn) units, an
// optional 3x3/s maxpool, and a 1x1/s projection shortcut when the shape
// changes (identity otherwise).
void xception_block(PlanBuilder& b, const std::string& name, int in, int out, int reps, int stride,
                    bool start_with_relu, int kernel = 3) {
  const int entry = b.last();
  const int pad = (kernel - 1) / 2;
  int ch = in;
  for (int r = 0; r < reps; ++r) {
    const std::string unit = name + ".rep" + std::to_string(r);
    if (r > 0 || start_with_relu) b.add(unit + ".relu", LayerKind::relu());
    const int next = r == 0 ? out : ch;
    b.add(unit + ".sep", LayerKind::separable_conv2d(kernel, 1, pad, ch, next));
    b.add(unit + ".bn", LayerKind::batchnorm2d(next));
    ch = next;
  }
  if (stride != 1) b.add(name + ".pool", LayerKind::maxpool2d(3, stride, 1));
  const int main = b.last();
  int skip = entry;
  if (in != out || stride != 1) {
    b.add(name + ".skip", LayerKind::conv2d(1, stride, 0, in, out), {entry});
    skip = b.add(name + ".skip_bn", LayerKind::batchnorm2d(out));
  }
  b.add(name + ".add", LayerKind::residual_add(), {main, skip});
}

void resnet_basic_block(PlanBuilder& b, const std::string& name, int ch) {
  const int entry = b.last();
  b.add(name + ".conv1", LayerKind::conv2d(3, 1, 1, ch, ch));
  b.add(name + ".bn1", LayerKind::batchnorm2d(ch));
  b.add(name + ".relu1", LayerKind::relu());
  b.add(name + ".conv2", LayerKind::conv2d(3, 1, 1, ch, ch));
  const int main = b.add(name + ".bn2", LayerKind::batchnorm2d(ch));
  b.add(name + ".add", LayerKind::residual_add(), {main, entry});
  b.add(name + ".relu2", LayerKind::relu());
}

struct XceptionStage {
  int in, out, reps, stride;
  bool start_with_relu;
};

constexpr XceptionStage kXceptionEntry[] = {
    {64, 128, 2, 2, false}, {128, 256, 2, 2, true}, {256, 728, 2, 2, true}, {728, 728, 3, 1, true},
    {728, 728, 3, 1, true},
};

}  // namespace

BackboneSpec BackboneSpec::parse(const std::string& text) {
  BackboneSpec s;
  const auto colon = text.find(':');
  const std::string family = text.substr(0, colon);
  if (family == "xception") {
    s.family = BackboneFamily::xception;
  } else if (family == "resnet") {
    s.family = BackboneFamily::resnet;
  } else if (family == "extended_block2") {
    s.family = BackboneFamily::extended_block2;
    s.truncation = 2;
  } else {
    throw ConfigError("unknown backbone family '" + family + "'");
  }
  if (colon != std::string::npos) {
    try {
      s.truncation = std::stoi(text.substr(colon + 1));
    } catch (const std::exception&) {
      throw ConfigError("invalid truncation in backbone '" + text + "'");
    }
  }
  s.validate();
  return s;
}

std::string BackboneSpec::to_string() const {
  switch (family) {
    case BackboneFamily::xception: return "xception:" + std::to_string(truncation);
    case BackboneFamily::resnet: return "resnet:" + std::to_string(truncation);
    case BackboneFamily::extended_block2: return "extended_block2";
  }
  return "?";
}

void BackboneSpec::validate() const {
  const bool ok = (family == BackboneFamily::xception && truncation >= 1 && truncation <= 5) ||
                  (family == BackboneFamily::resnet && truncation == 1) ||
                  (family == BackboneFamily::extended_block2 && truncation == 2);
  if (!ok) throw ConfigError("invalid truncation " + std::to_string(truncation) + " for backbone family");
}

int BackboneSpec::patience_multiplier() const {
  if (family == BackboneFamily::xception && truncation == 1) return 50;
  if ((family == BackboneFamily::xception || family == BackboneFamily::extended_block2) && truncation == 2)
    return 20;
  return 10;
}

std::vector<PlanNode> backbone_plan(const BackboneSpec& spec) {
  spec.validate();
  PlanBuilder b;
  int width = 0;
  if (spec.family == BackboneFamily::resnet) {
    b.add("conv1", LayerKind::conv2d(7, 2, 3, 3, 64), {Graph<float>::kInput});
    b.add("bn1", LayerKind::batchnorm2d(64));
    b.add("relu", LayerKind::relu());
    b.add("maxpool", LayerKind::maxpool2d(3, 2, 1));
    resnet_basic_block(b, "layer1.0", 64);
    resnet_basic_block(b, "layer1.1", 64);
    width = 64;
  } else {
    b.add("conv1", LayerKind::conv2d(3, 2, 0, 3, 32), {Graph<float>::kInput});
    b.add("bn1", LayerKind::batchnorm2d(32));
    b.add("relu1", LayerKind::relu());
    b.add("conv2", LayerKind::conv2d(3, 1, 0, 32, 64));
    b.add("bn2", LayerKind::batchnorm2d(64));
    b.add("relu2", LayerKind::relu());
    for (int i = 0; i < spec.truncation; ++i) {
      const auto& st = kXceptionEntry[i];
      xception_block(b, "block" + std::to_string(i + 1), st.in, st.out, st.reps, st.stride, st.start_with_relu);
      width = st.out;
    }
    if (spec.family == BackboneFamily::extended_block2) {
      // Two extra middle-flow blocks whose separable convolutions are 1x1,
      // adding depth and parameters without widening the receptive field.
      xception_block(b, "ext1", width, width, 3, 1, true, 1);
      xception_block(b, "ext2", width, width, 3, 1, true, 1);
    }
  }
  b.add("head", LayerKind::pointwise_conv(width, 2, true));
  return b.take();
}

int feature_node(const std::vector<PlanNode>& plan) {
  if (plan.empty()) throw StructuralError("empty plan has no feature node");
  return plan.back().inputs.at(0);
}

template <typename T>
Graph<T> build_graph(const std::vector<PlanNode>& plan, std::size_t in_channels) {
  Graph<T> g(in_channels);
  for (const auto& n : plan) g.add(n.name, n.kind, n.inputs);
  return g;
}

template <typename T>
Graph<T> build_backbone(const BackboneSpec& spec, std::uint64_t rng_seed) {
  Graph<T> g = build_graph<T>(backbone_plan(spec), 3);
  g.initialize(rng_seed);
  return g;
}

template Graph<float> build_graph<float>(const std::vector<PlanNode>&, std::size_t);
template Graph<double> build_graph<double>(const std::vector<PlanNode>&, std::size_t);
template Graph<float> build_backbone<float>(const BackboneSpec&, std::uint64_t);
template Graph<double> build_backbone<double>(const BackboneSpec&, std::uint64_t);

}  // namespace pf
