#include "emcid/gradcheck.hpp"

#include <cmath>

namespace emcid {

Matrix finite_diff_grad(const std::function<double(const Matrix&)>& f, const Matrix& x, double h) {
  if (!(h > 0.0)) throw NonFiniteEvaluation("finite_diff_grad: step must be positive");
  Matrix g(x.rows(), x.cols());
  Matrix probe = x;
  for (size_t i = 0; i < x.size(); ++i) {
    const double orig = probe.data()[i];
    probe.data()[i] = orig + h;
    const double fp = f(probe);
    probe.data()[i] = orig - h;
    const double fm = f(probe);
    probe.data()[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NonFiniteEvaluation("finite_diff_grad: function not finite near x");
    g.data()[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

double max_rel_error(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw DimensionMismatch("max_rel_error: shape mismatch");
  double scale = 1.0;
  for (size_t i = 0; i < a.size(); ++i) {
    scale = std::max(scale, std::abs(a.data()[i]));
    scale = std::max(scale, std::abs(b.data()[i]));
  }
  double err = 0.0;
  for (size_t i = 0; i < a.size(); ++i)
    err = std::max(err, std::abs(a.data()[i] - b.data()[i]));
  return err / scale;
}

}  // namespace emcid
