#include "pf/cli/checks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <set>

#include "pf/analysis/exaggerate.hpp"
#include "pf/backbones/backbone.hpp"
#include "pf/backbones/receptive_field.hpp"
#include "pf/backbones/rf_probe.hpp"
#include "pf/diffcore/grad_check.hpp"
#include "pf/diffcore/primitive_cases.hpp"
#include "pf/forensics/metrics.hpp"
#include "pf/forensics/patch.hpp"
#include "pf/pipeline/resample.hpp"

namespace pf::checks {

namespace {

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

const BackboneSpec kTableSpecs[] = {{BackboneFamily::xception, 1}, {BackboneFamily::xception, 2},
                                    {BackboneFamily::xception, 3}, {BackboneFamily::xception, 4},
                                    {BackboneFamily::xception, 5}, {BackboneFamily::resnet, 1}};

}  // namespace

Verdict gradient_fidelity(int instances, std::uint64_t seed) {
  Verdict v{"gradient fidelity", true, ""};
  Rng rng(seed);
  double worst32 = 0, worst64 = 0;
  std::string failures;
  for (LayerOp op : all_primitive_ops()) {
    for (int i = 0; i < instances; ++i) {
      auto pf = make_primitive_case<float>(op, rng);
      const auto rf = grad_check(pf.graph, pf.input, 1e-3);
      auto pd = make_primitive_case<double>(op, rng);
      const auto rd = grad_check(pd.graph, pd.input, 1e-6);
      worst32 = std::max(worst32, rf.max_rel_error);
      worst64 = std::max(worst64, rd.max_rel_error);
      if (!rf.passed || !rd.passed) {
        v.passed = false;
        if (failures.size() < 200) failures += " " + (rf.passed ? pd.label : pf.label);
      }
    }
  }
  v.detail = fmt("%d instances x %zu primitives; max rel err f32 %.2e (< 1e-3), f64 %.2e (< 1e-6)", instances,
                 all_primitive_ops().size(), worst32, worst64) +
             (failures.empty() ? "" : "; failing:" + failures);
  return v;
}

Verdict receptive_field_table(std::span<const long> expected) {
  Verdict v{"receptive field table", true, ""};
  for (std::size_t i = 0; i < 6 && i < expected.size(); ++i) {
    const long rf = receptive_field(backbone_plan(kTableSpecs[i])).rf;
    v.detail += fmt("%s%s=%ld", i ? ", " : "", kTableSpecs[i].to_string().c_str(), rf);
    if (rf != expected[i]) {
      v.passed = false;
      v.detail += fmt(" (expected %ld)", expected[i]);
    }
  }
  return v;
}

Verdict parameter_counts(std::span<const double> expected_millions, double tolerance) {
  Verdict v{"parameter counts", true, ""};
  for (std::size_t i = 0; i < 6 && i < expected_millions.size(); ++i) {
    const double n = double(param_count(build_backbone(kTableSpecs[i], 0))) / 1e6;
    const double rel = std::abs(n - expected_millions[i]) / expected_millions[i];
    v.detail += fmt("%s%s=%.4fM (%+.1f%%)", i ? ", " : "", kTableSpecs[i].to_string().c_str(), n,
                    100 * (n - expected_millions[i]) / expected_millions[i]);
    if (rel > tolerance) v.passed = false;
  }
  return v;
}

Verdict loss_analytics() {
  Verdict v{"loss analytics", true, ""};
  const auto uniform = PatchGrid::from_logits(4, 5, std::vector<double>(40, -1.3));
  const double u_real = patch_loss(uniform, kReal).loss, u_fake = patch_loss(uniform, kFake).loss;
  const double two = patch_loss(PatchGrid::from_fake_probs(1, 2, {0.9, 0.5}), kFake).loss;
  const double expected_two = -(std::log(0.9) + std::log(0.5)) / 2;
  v.passed = std::abs(u_real - std::numbers::ln2) < 1e-6 && std::abs(u_fake - std::numbers::ln2) < 1e-6 &&
             std::abs(two - expected_two) < 1e-6;
  v.detail = fmt("uniform %.10f / %.10f vs ln2 %.10f; two-patch %.10f vs %.10f", u_real, u_fake, std::numbers::ln2,
                 two, expected_two);
  return v;
}

double average_precision_bruteforce(std::span<const double> s, std::span<const int> l) {
  std::set<double, std::greater<>> thresholds(s.begin(), s.end());
  double positives = 0;
  for (int x : l) positives += x;
  double ap = 0, prev = 0;
  for (double t : thresholds) {
    double tp = 0, pp = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
      if (s[i] >= t) {
        ++pp;
        tp += l[i];
      }
    ap += (tp / positives - prev) * (tp / pp);
    prev = tp / positives;
  }
  return ap;
}

Verdict ap_oracle(int instances, std::uint64_t seed) {
  Verdict v{"AP oracle", true, ""};
  Rng rng(seed);
  int mismatches = 0, tied = 0;
  for (int trial = 0; trial < instances; ++trial) {
    const auto n = std::size_t(rng.uniform_int(2, 50));
    std::vector<double> s(n);
    std::vector<int> l(n);
    const bool coarse = trial % 2 == 0;
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = coarse ? double(rng.uniform_int(0, 5)) / 5.0 : rng.uniform();
      l[i] = int(rng.uniform_int(0, 1));
    }
    // Both classes present, at random positions.
    const auto a = std::size_t(rng.uniform_int(0, long(n) - 1));
    const auto b = (a + std::size_t(rng.uniform_int(1, long(n) - 1))) % n;
    l[a] = 0;
    l[b] = 1;
    if (std::set<double>(s.begin(), s.end()).size() < n) ++tied;
    if (average_precision(s, l) != average_precision_bruteforce(s, l)) ++mismatches;
  }
  v.passed = mismatches == 0;
  v.detail = fmt("%d instances (%d with tie groups), %d mismatches (exact equality)", instances, tied, mismatches);
  return v;
}

Verdict empirical_receptive_field(int max_truncation, int trials, std::uint64_t seed) {
  Verdict v{"empirical receptive field", true, ""};
  for (int t = 1; t <= max_truncation; ++t) {
    const BackboneSpec spec{BackboneFamily::xception, t};
    // The image must exceed the window so that out-of-window pixels exist.
    const auto rf = std::size_t(receptive_field(backbone_plan(spec)).rf);
    const std::size_t size = std::max<std::size_t>(64, rf + 2 * 16 + 8);
    const auto r = probe_receptive_field(spec, size, trials, seed + std::uint64_t(t));
    v.passed = v.passed && r.ok() && r.trials == trials;
    v.detail += fmt("%sxception:%d %d/%d unchanged, %d/%d center moved", t > 1 ? "; " : "", t, r.outside_unchanged,
                    r.trials, r.center_changed, r.trials);
  }
  return v;
}

Verdict lanczos(double tolerance) {
  Verdict v{"Lanczos", true, ""};
  Rng rng(5);
  ImageBuffer img(23, 11, 3);
  for (auto& x : img.data) x = float(rng.uniform());
  const auto same = lanczos_resize(img, 23, 11);
  double identity = 0;
  for (std::size_t i = 0; i < img.data.size(); ++i)
    identity = std::max(identity, double(std::abs(same.data[i] - img.data[i])));

  double constant = 0;
  const ImageBuffer flat(31, 17, 3, 0.61f);
  for (auto [w, h] : {std::pair{64, 64}, {5, 40}, {1, 1}, {97, 9}})
    for (float x : lanczos_resize(flat, std::size_t(w), std::size_t(h)).data)
      constant = std::max(constant, std::abs(double(x) - 0.61));

  // Impulse at the center of a 13-sample line, upsampled 2x: output j samples
  // source position (j + 0.5) / 2 - 0.5 with the unstretched kernel. The line
  // sits on a 0.5 pedestal so the negative lobes survive the [0, 1] clamp.
  double impulse = 0;
  ImageBuffer line(13, 1, 1, 0.5f);
  line.at(0, 0, 6) = 0.75f;
  const auto up = lanczos_resize(line, 26, 1);
  auto k = [](double x) {
    if (std::abs(x) >= 3) return 0.0;
    if (x == 0) return 1.0;
    const double a = std::numbers::pi * x, b = a / 3;
    return std::sin(a) / a * (std::sin(b) / b);
  };
  for (int j = 0; j < 26; ++j) {
    const double pos = (j + 0.5) / 2 - 0.5;
    double sum = 0;
    for (int i = 0; i < 13; ++i) sum += k(i - pos);
    const double response = (double(up.at(0, 0, std::size_t(j))) - 0.5) / 0.25;
    impulse = std::max(impulse, std::abs(response - k(6 - pos) / sum));
  }
  v.passed = identity <= tolerance && constant <= tolerance && impulse <= tolerance;
  v.detail = fmt("identity %.2e, constant %.2e, impulse %.2e (tolerance %.0e)", identity, constant, impulse, tolerance);
  return v;
}

Verdict exaggerate_quadratic(double tolerance) {
  Verdict v{"exaggeration surrogate", true, ""};
  ExaggerateConfig cfg;
  cfg.lambda = 1.0;
  cfg.steps = 2000;
  cfg.lr = 0.05;
  cfg.seed = 1;
  const auto s = exaggerate(quadratic_shift_objective(cfg.lambda), 1, cfg);
  v.passed = std::abs(s.w[0] + 0.5) < tolerance;
  v.detail = fmt("w = %.8f, target -0.5, |error| %.2e (tolerance %.0e)", s.w[0], std::abs(s.w[0] + 0.5), tolerance);
  return v;
}

std::vector<Verdict> selftest_suite(std::uint64_t seed) {
  // Block 5 is checked against the recurrence (187 + 3 * 2 * 16) rather than
  // a copied constant.
  const long rf[] = {19, 43, 91, 187, 283, 43};
  return {gradient_fidelity(10, seed), receptive_field_table(rf), loss_analytics(), ap_oracle(200, seed + 1),
          empirical_receptive_field(2, 5, seed + 2), lanczos(1e-6), exaggerate_quadratic(1e-3)};
}

}  // namespace pf::checks
