#include "emcid/tape.hpp"

#include <cmath>
#include <cstring>
#include <numbers>
#include <string>

namespace emcid {

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

double gelu_fwd(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
  const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
  return cdf + x * pdf;
}

}  // namespace

NodeId GradTape::push(Node n) {
  std::vector<const Matrix*> in;
  in.reserve(n.inputs.size());
  for (NodeId id : n.inputs) in.push_back(&nodes_[id].value);
  if (n.op != Op::Constant && n.op != Op::Leaf) {
    n.value = compute(n, in, &n.aux);
  }
  nodes_.push_back(std::move(n));
  return NodeId(nodes_.size() - 1);
}

Matrix GradTape::compute(const Node& n, const std::vector<const Matrix*>& in, Matrix* aux) const {
  switch (n.op) {
    case Op::Constant:
    case Op::Leaf:
      return n.value;
    case Op::MatMul:
      return emcid::matmul(*in[0], *in[1]);
    case Op::MatMulNT:
      return emcid::matmul_nt(*in[0], *in[1]);
    case Op::Add:
      return emcid::add(*in[0], *in[1]);
    case Op::Sub:
      return emcid::sub(*in[0], *in[1]);
    case Op::Scale:
      return emcid::scale(*in[0], n.scalar);
    case Op::AddRowBroadcast: {
      Matrix out = *in[0];
      const double* r = in[1]->data();
      for (int i = 0; i < out.rows(); ++i) {
        double* oi = out.row(i);
        for (int j = 0; j < out.cols(); ++j) oi[j] += r[j];
      }
      return out;
    }
    case Op::MulRowBroadcast: {
      Matrix out = *in[0];
      const double* r = in[1]->data();
      for (int i = 0; i < out.rows(); ++i) {
        double* oi = out.row(i);
        for (int j = 0; j < out.cols(); ++j) oi[j] *= r[j];
      }
      return out;
    }
    case Op::AddAtRow: {
      Matrix out = *in[0];
      double* oi = out.row(n.int_args[0]);
      const double* d = in[1]->data();
      for (int j = 0; j < out.cols(); ++j) oi[j] += d[j];
      return out;
    }
    case Op::GatherRows: {
      Matrix out(int(n.int_args.size()), in[0]->cols());
      for (size_t i = 0; i < n.int_args.size(); ++i)
        std::memcpy(out.row(int(i)), in[0]->row(n.int_args[i]), sizeof(double) * out.cols());
      return out;
    }
    case Op::Gelu: {
      Matrix out = *in[0];
      double* d = out.data();
      for (size_t i = 0; i < out.size(); ++i) d[i] = gelu_fwd(d[i]);
      return out;
    }
    case Op::NormRows: {
      const Matrix& x = *in[0];
      Matrix out(x.rows(), x.cols());
      Matrix stats(x.rows(), 2);  // mean, inv std
      const int m = x.cols();
      for (int i = 0; i < x.rows(); ++i) {
        const double* xi = x.row(i);
        double mean = 0.0;
        for (int j = 0; j < m; ++j) mean += xi[j];
        mean /= m;
        double var = 0.0;
        for (int j = 0; j < m; ++j) var += (xi[j] - mean) * (xi[j] - mean);
        var /= m;
        const double inv_std = 1.0 / std::sqrt(var + n.scalar);
        stats(i, 0) = mean;
        stats(i, 1) = inv_std;
        double* oi = out.row(i);
        for (int j = 0; j < m; ++j) oi[j] = (xi[j] - mean) * inv_std;
      }
      if (aux) *aux = std::move(stats);
      return out;
    }
    case Op::SoftmaxRows: {
      const Matrix& x = *in[0];
      Matrix out(x.rows(), x.cols());
      const int m = x.cols();
      for (int i = 0; i < x.rows(); ++i) {
        const double* xi = x.row(i);
        double hi = xi[0];
        for (int j = 1; j < m; ++j) hi = std::max(hi, xi[j]);
        double z = 0.0;
        double* oi = out.row(i);
        for (int j = 0; j < m; ++j) {
          oi[j] = std::exp(xi[j] - hi);
          z += oi[j];
        }
        const double inv = 1.0 / z;
        for (int j = 0; j < m; ++j) oi[j] *= inv;
      }
      return out;
    }
    case Op::SelectRow: {
      Matrix out(1, in[0]->cols());
      std::memcpy(out.data(), in[0]->row(n.int_args[0]), sizeof(double) * out.cols());
      return out;
    }
    case Op::SliceCols: {
      const int c0 = n.int_args[0], c1 = n.int_args[1];
      Matrix out(in[0]->rows(), c1 - c0);
      for (int i = 0; i < out.rows(); ++i)
        std::memcpy(out.row(i), in[0]->row(i) + c0, sizeof(double) * out.cols());
      return out;
    }
    case Op::ConcatCols: {
      int cols = 0;
      for (const Matrix* p : in) cols += p->cols();
      Matrix out(in[0]->rows(), cols);
      for (int i = 0; i < out.rows(); ++i) {
        double* oi = out.row(i);
        for (const Matrix* p : in) {
          std::memcpy(oi, p->row(i), sizeof(double) * p->cols());
          oi += p->cols();
        }
      }
      return out;
    }
    case Op::ConcatRows: {
      int rows = 0;
      for (const Matrix* p : in) rows += p->rows();
      Matrix out(rows, in[0]->cols());
      int r = 0;
      for (const Matrix* p : in) {
        std::memcpy(out.row(r), p->data(), sizeof(double) * p->size());
        r += p->rows();
      }
      return out;
    }
    case Op::SumSq: {
      Matrix out(1, 1);
      out(0, 0) = sum_squares(*in[0]);
      return out;
    }
    case Op::CrossEntropyRows: {
      const Matrix& x = *in[0];
      Matrix probs(x.rows(), x.cols());
      const int m = x.cols();
      double nll = 0.0;
      for (int i = 0; i < x.rows(); ++i) {
        const double* xi = x.row(i);
        double hi = xi[0];
        for (int j = 1; j < m; ++j) hi = std::max(hi, xi[j]);
        double z = 0.0;
        double* pi = probs.row(i);
        for (int j = 0; j < m; ++j) {
          pi[j] = std::exp(xi[j] - hi);
          z += pi[j];
        }
        const double inv = 1.0 / z;
        for (int j = 0; j < m; ++j) pi[j] *= inv;
        nll -= std::log(pi[n.int_args[i]]);
      }
      if (aux) *aux = std::move(probs);
      Matrix out(1, 1);
      out(0, 0) = nll / x.rows();
      return out;
    }
  }
  throw Error(ErrorKind::Numerical, "GradTape", "unreachable op");
}

NodeId GradTape::constant(Matrix value) {
  Node n;
  n.op = Op::Constant;
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId GradTape::leaf(Matrix value) {
  Node n;
  n.op = Op::Leaf;
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId GradTape::matmul(NodeId a, NodeId b) {
  return push({Op::MatMul, {}, {a, b}, {}, 0.0, {}});
}

NodeId GradTape::matmul_nt(NodeId a, NodeId b) {
  return push({Op::MatMulNT, {}, {a, b}, {}, 0.0, {}});
}

NodeId GradTape::add(NodeId a, NodeId b) { return push({Op::Add, {}, {a, b}, {}, 0.0, {}}); }

NodeId GradTape::sub(NodeId a, NodeId b) { return push({Op::Sub, {}, {a, b}, {}, 0.0, {}}); }

NodeId GradTape::scale(NodeId a, double s) { return push({Op::Scale, {}, {a}, {}, s, {}}); }

NodeId GradTape::add_row_broadcast(NodeId a, NodeId row) {
  if (value(row).rows() != 1 || value(row).cols() != value(a).cols())
    throw DimensionMismatch("add_row_broadcast: row must be 1 x cols(a)");
  return push({Op::AddRowBroadcast, {}, {a, row}, {}, 0.0, {}});
}

NodeId GradTape::mul_row_broadcast(NodeId a, NodeId row) {
  if (value(row).rows() != 1 || value(row).cols() != value(a).cols())
    throw DimensionMismatch("mul_row_broadcast: row must be 1 x cols(a)");
  return push({Op::MulRowBroadcast, {}, {a, row}, {}, 0.0, {}});
}

NodeId GradTape::add_at_row(NodeId a, int r, NodeId delta) {
  if (r < 0 || r >= value(a).rows()) throw DimensionMismatch("add_at_row: row out of range");
  if (value(delta).rows() != 1 || value(delta).cols() != value(a).cols())
    throw DimensionMismatch("add_at_row: delta must be 1 x cols(a)");
  return push({Op::AddAtRow, {}, {a, delta}, {r}, 0.0, {}});
}

NodeId GradTape::gather_rows(NodeId table, std::vector<int> indices) {
  for (int i : indices)
    if (i < 0 || i >= value(table).rows())
      throw DimensionMismatch("gather_rows: index out of range");
  return push({Op::GatherRows, {}, {table}, std::move(indices), 0.0, {}});
}

NodeId GradTape::gelu(NodeId a) { return push({Op::Gelu, {}, {a}, {}, 0.0, {}}); }

NodeId GradTape::norm_rows(NodeId a, double eps) {
  return push({Op::NormRows, {}, {a}, {}, eps, {}});
}

NodeId GradTape::softmax_rows(NodeId a) { return push({Op::SoftmaxRows, {}, {a}, {}, 0.0, {}}); }

NodeId GradTape::select_row(NodeId a, int r) {
  if (r < 0 || r >= value(a).rows()) throw DimensionMismatch("select_row: row out of range");
  return push({Op::SelectRow, {}, {a}, {r}, 0.0, {}});
}

NodeId GradTape::slice_cols(NodeId a, int c0, int c1) {
  if (c0 < 0 || c1 > value(a).cols() || c0 >= c1)
    throw DimensionMismatch("slice_cols: bad column range");
  return push({Op::SliceCols, {}, {a}, {c0, c1}, 0.0, {}});
}

NodeId GradTape::concat_cols(const std::vector<NodeId>& parts) {
  if (parts.empty()) throw DimensionMismatch("concat_cols: no parts");
  for (NodeId p : parts)
    if (value(p).rows() != value(parts[0]).rows())
      throw DimensionMismatch("concat_cols: row mismatch");
  return push({Op::ConcatCols, {}, parts, {}, 0.0, {}});
}

NodeId GradTape::concat_rows(const std::vector<NodeId>& parts) {
  if (parts.empty()) throw DimensionMismatch("concat_rows: no parts");
  for (NodeId p : parts)
    if (value(p).cols() != value(parts[0]).cols())
      throw DimensionMismatch("concat_rows: column mismatch");
  return push({Op::ConcatRows, {}, parts, {}, 0.0, {}});
}

NodeId GradTape::sum_sq(NodeId a) { return push({Op::SumSq, {}, {a}, {}, 0.0, {}}); }

NodeId GradTape::cross_entropy_rows(NodeId logits, std::vector<int> targets) {
  if (int(targets.size()) != value(logits).rows())
    throw DimensionMismatch("cross_entropy_rows: one target per row required");
  for (int t : targets)
    if (t < 0 || t >= value(logits).cols())
      throw DimensionMismatch("cross_entropy_rows: target out of range");
  return push({Op::CrossEntropyRows, {}, {logits}, std::move(targets), 0.0, {}});
}

GradTape::BackwardResult GradTape::backward(NodeId loss, const std::vector<NodeId>& leaves) const {
  const Matrix& lv = nodes_[loss].value;
  if (lv.rows() != 1 || lv.cols() != 1)
    throw DimensionMismatch("backward: loss must be a 1x1 node");

  // Reachability sweep so disconnected leaves can be reported.
  std::vector<char> reach(nodes_.size(), 0);
  reach[loss] = 1;
  for (NodeId id = loss; id >= 0; --id) {
    if (!reach[id]) continue;
    for (NodeId in : nodes_[id].inputs) reach[in] = 1;
  }

  std::vector<Matrix> grads(nodes_.size());
  auto grad_of = [&](NodeId id) -> Matrix& {
    if (grads[id].empty()) grads[id] = Matrix(nodes_[id].value.rows(), nodes_[id].value.cols());
    return grads[id];
  };
  grad_of(loss)(0, 0) = 1.0;

  for (NodeId id = loss; id >= 0; --id) {
    const Node& n = nodes_[id];
    if (!reach[id] || grads[id].empty()) continue;
    const Matrix& g = grads[id];
    switch (n.op) {
      case Op::Constant:
      case Op::Leaf:
        break;
      case Op::MatMul: {
        const Matrix& a = nodes_[n.inputs[0]].value;
        const Matrix& b = nodes_[n.inputs[1]].value;
        matmul_nt_acc(grad_of(n.inputs[0]), g, b);
        matmul_tn_acc(grad_of(n.inputs[1]), a, g);
        break;
      }
      case Op::MatMulNT: {
        const Matrix& a = nodes_[n.inputs[0]].value;
        const Matrix& b = nodes_[n.inputs[1]].value;
        matmul_acc(grad_of(n.inputs[0]), g, b);
        matmul_tn_acc(grad_of(n.inputs[1]), g, a);
        break;
      }
      case Op::Add: {
        for (int k = 0; k < 2; ++k) {
          Matrix& ga = grad_of(n.inputs[k]);
          double* gd = ga.data();
          const double* s = g.data();
          for (size_t i = 0; i < ga.size(); ++i) gd[i] += s[i];
        }
        break;
      }
      case Op::Sub: {
        Matrix& ga = grad_of(n.inputs[0]);
        Matrix& gb = grad_of(n.inputs[1]);
        const double* s = g.data();
        for (size_t i = 0; i < ga.size(); ++i) ga.data()[i] += s[i];
        for (size_t i = 0; i < gb.size(); ++i) gb.data()[i] -= s[i];
        break;
      }
      case Op::Scale: {
        Matrix& ga = grad_of(n.inputs[0]);
        const double* s = g.data();
        for (size_t i = 0; i < ga.size(); ++i) ga.data()[i] += n.scalar * s[i];
        break;
      }
      case Op::AddRowBroadcast: {
        Matrix& ga = grad_of(n.inputs[0]);
        Matrix& gr = grad_of(n.inputs[1]);
        const double* s = g.data();
        for (size_t i = 0; i < ga.size(); ++i) ga.data()[i] += s[i];
        for (int i = 0; i < g.rows(); ++i) {
          const double* gi = g.row(i);
          for (int j = 0; j < g.cols(); ++j) gr(0, j) += gi[j];
        }
        break;
      }
      case Op::MulRowBroadcast: {
        const Matrix& a = nodes_[n.inputs[0]].value;
        const Matrix& r = nodes_[n.inputs[1]].value;
        Matrix& ga = grad_of(n.inputs[0]);
        Matrix& gr = grad_of(n.inputs[1]);
        for (int i = 0; i < g.rows(); ++i) {
          const double* gi = g.row(i);
          const double* ai = a.row(i);
          double* gai = ga.row(i);
          for (int j = 0; j < g.cols(); ++j) {
            gai[j] += gi[j] * r(0, j);
            gr(0, j) += gi[j] * ai[j];
          }
        }
        break;
      }
      case Op::AddAtRow: {
        Matrix& ga = grad_of(n.inputs[0]);
        Matrix& gd = grad_of(n.inputs[1]);
        const double* s = g.data();
        for (size_t i = 0; i < ga.size(); ++i) ga.data()[i] += s[i];
        const double* gi = g.row(n.int_args[0]);
        for (int j = 0; j < g.cols(); ++j) gd(0, j) += gi[j];
        break;
      }
      case Op::GatherRows: {
        Matrix& gt = grad_of(n.inputs[0]);
        for (size_t i = 0; i < n.int_args.size(); ++i) {
          const double* gi = g.row(int(i));
          double* ti = gt.row(n.int_args[i]);
          for (int j = 0; j < g.cols(); ++j) ti[j] += gi[j];
        }
        break;
      }
      case Op::Gelu: {
        const Matrix& x = nodes_[n.inputs[0]].value;
        Matrix& ga = grad_of(n.inputs[0]);
        const double* xd = x.data();
        const double* gd = g.data();
        for (size_t i = 0; i < x.size(); ++i) ga.data()[i] += gd[i] * gelu_grad(xd[i]);
        break;
      }
      case Op::NormRows: {
        const Matrix& y = n.value;
        Matrix& ga = grad_of(n.inputs[0]);
        const int m = y.cols();
        for (int i = 0; i < y.rows(); ++i) {
          const double* yi = y.row(i);
          const double* gi = g.row(i);
          const double inv_std = n.aux(i, 1);
          double mean_g = 0.0, mean_gy = 0.0;
          for (int j = 0; j < m; ++j) {
            mean_g += gi[j];
            mean_gy += gi[j] * yi[j];
          }
          mean_g /= m;
          mean_gy /= m;
          double* gai = ga.row(i);
          for (int j = 0; j < m; ++j)
            gai[j] += inv_std * (gi[j] - mean_g - yi[j] * mean_gy);
        }
        break;
      }
      case Op::SoftmaxRows: {
        const Matrix& y = n.value;
        Matrix& ga = grad_of(n.inputs[0]);
        const int m = y.cols();
        for (int i = 0; i < y.rows(); ++i) {
          const double* yi = y.row(i);
          const double* gi = g.row(i);
          double dot_gy = 0.0;
          for (int j = 0; j < m; ++j) dot_gy += gi[j] * yi[j];
          double* gai = ga.row(i);
          for (int j = 0; j < m; ++j) gai[j] += yi[j] * (gi[j] - dot_gy);
        }
        break;
      }
      case Op::SelectRow: {
        Matrix& ga = grad_of(n.inputs[0]);
        double* ti = ga.row(n.int_args[0]);
        const double* gi = g.data();
        for (int j = 0; j < g.cols(); ++j) ti[j] += gi[j];
        break;
      }
      case Op::SliceCols: {
        Matrix& ga = grad_of(n.inputs[0]);
        const int c0 = n.int_args[0];
        for (int i = 0; i < g.rows(); ++i) {
          const double* gi = g.row(i);
          double* ti = ga.row(i) + c0;
          for (int j = 0; j < g.cols(); ++j) ti[j] += gi[j];
        }
        break;
      }
      case Op::ConcatCols: {
        int off = 0;
        for (NodeId part : n.inputs) {
          Matrix& gp = grad_of(part);
          for (int i = 0; i < g.rows(); ++i) {
            const double* gi = g.row(i) + off;
            double* ti = gp.row(i);
            for (int j = 0; j < gp.cols(); ++j) ti[j] += gi[j];
          }
          off += gp.cols();
        }
        break;
      }
      case Op::ConcatRows: {
        int off = 0;
        for (NodeId part : n.inputs) {
          Matrix& gp = grad_of(part);
          const double* src = g.row(off);
          double* dst = gp.data();
          for (size_t i = 0; i < gp.size(); ++i) dst[i] += src[i];
          off += gp.rows();
        }
        break;
      }
      case Op::SumSq: {
        const Matrix& x = nodes_[n.inputs[0]].value;
        Matrix& ga = grad_of(n.inputs[0]);
        const double s = 2.0 * g(0, 0);
        const double* xd = x.data();
        for (size_t i = 0; i < x.size(); ++i) ga.data()[i] += s * xd[i];
        break;
      }
      case Op::CrossEntropyRows: {
        const Matrix& probs = n.aux;
        Matrix& ga = grad_of(n.inputs[0]);
        const double s = g(0, 0) / probs.rows();
        for (int i = 0; i < probs.rows(); ++i) {
          const double* pi = probs.row(i);
          double* gai = ga.row(i);
          for (int j = 0; j < probs.cols(); ++j) gai[j] += s * pi[j];
          gai[n.int_args[i]] -= s;
        }
        break;
      }
    }
  }

  BackwardResult result;
  result.grads.reserve(leaves.size());
  for (NodeId leaf : leaves) {
    if (!reach[leaf]) result.disconnected.push_back(leaf);
    if (grads[leaf].empty())
      result.grads.push_back(Matrix(nodes_[leaf].value.rows(), nodes_[leaf].value.cols()));
    else
      result.grads.push_back(std::move(grads[leaf]));
  }
  return result;
}

bool GradTape::replay_matches() const {
  for (const Node& n : nodes_) {
    if (n.op == Op::Constant || n.op == Op::Leaf) continue;
    std::vector<const Matrix*> in;
    in.reserve(n.inputs.size());
    for (NodeId id : n.inputs) in.push_back(&nodes_[id].value);
    Matrix replayed = compute(n, in, nullptr);
    if (!(replayed == n.value)) return false;
  }
  return true;
}

}  // namespace emcid
