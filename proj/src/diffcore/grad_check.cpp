#include "pf/diffcore/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <type_traits>

namespace pf {

namespace {

template <typename T>
double project(Graph<T>& g, const Tensor<T>& input, const Tensor<T>& r) {
  const Tensor<T>& y = g.forward(input);
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += double(r[i]) * double(y[i]);
  return s;
}

double rel_error(double a, double n, double floor) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

}  // namespace

template <typename T>
GradCheckReport grad_check(Graph<T>& graph, const Tensor<T>& input, double tolerance, const GradCheckOptions& opts) {
  constexpr bool is_float = std::is_same_v<T, float>;
  // Float: 2^-8, close to the cbrt(eps) optimum of central differences and
  // exactly representable, so x + h loses no bits to the step itself.
  const double h = opts.step > 0 ? opts.step : (is_float ? 0x1p-8 : 1e-6);
  const double floor = opts.floor > 0 ? opts.floor : 1.0;

  Tensor<T> r(graph.output_shape(input.shape()));
  Rng rng(opts.seed);
  for (auto& v : r.values()) v = static_cast<T>(rng.uniform(-1.0, 1.0));

  graph.zero_grad();
  graph.forward(input);
  const Tensor<T> dinput = graph.backward(r);

  GradCheckReport report;
  report.tolerance = tolerance;
  for (auto& p : graph.parameters()) {
    if (!p.tensor->requires_grad()) continue;
    GradCheckEntry e{p.name, p.tensor->size(), 0.0};
    const std::vector<T> analytic(p.tensor->grad().begin(), p.tensor->grad().end());
    for (std::size_t i = 0; i < p.tensor->size(); ++i) {
      const T saved = (*p.tensor)[i];
      const T hi = static_cast<T>(saved + h), lo = static_cast<T>(saved - h);
      (*p.tensor)[i] = hi;
      const double up = project(graph, input, r);
      (*p.tensor)[i] = lo;
      const double down = project(graph, input, r);
      (*p.tensor)[i] = saved;
      const double numeric = (up - down) / (double(hi) - double(lo));
      e.max_rel_error = std::max(e.max_rel_error, rel_error(analytic[i], numeric, floor));
    }
    report.entries.push_back(e);
  }
  if (opts.check_input) {
    GradCheckEntry e{"input", input.size(), 0.0};
    Tensor<T> x = input;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const T saved = x[i];
      const T hi = static_cast<T>(saved + h), lo = static_cast<T>(saved - h);
      x[i] = hi;
      const double up = project(graph, x, r);
      x[i] = lo;
      const double down = project(graph, x, r);
      x[i] = saved;
      const double numeric = (up - down) / (double(hi) - double(lo));
      e.max_rel_error = std::max(e.max_rel_error, rel_error(dinput[i], numeric, floor));
    }
    report.entries.push_back(e);
  }
  for (const auto& e : report.entries) report.max_rel_error = std::max(report.max_rel_error, e.max_rel_error);
  report.passed = report.max_rel_error < tolerance;
  return report;
}

template GradCheckReport grad_check(Graph<float>&, const Tensor<float>&, double, const GradCheckOptions&);
template GradCheckReport grad_check(Graph<double>&, const Tensor<double>&, double, const GradCheckOptions&);

}  // namespace pf
