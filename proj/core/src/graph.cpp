#include "qilcm/graph.hpp"

#include <cmath>
#include <limits>

#include "qilcm/errors.hpp"

namespace qilcm::diff {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::constant: return "constant";
    case OpKind::matmul: return "matmul";
    case OpKind::elu: return "elu";
    case OpKind::softmax: return "softmax";
    case OpKind::hadamard: return "hadamard";
    case OpKind::concat: return "concat";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::scale_add: return "scale_add";
    case OpKind::scale: return "scale";
    case OpKind::add_scalar: return "add_scalar";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::add_rowvec: return "add_rowvec";
    case OpKind::sub_rowvec: return "sub_rowvec";
    case OpKind::mul_rowvec: return "mul_rowvec";
    case OpKind::square: return "square";
    case OpKind::sqrt: return "sqrt";
    case OpKind::log: return "log";
    case OpKind::recip: return "recip";
    case OpKind::clamp_min: return "clamp_min";
    case OpKind::reshape: return "reshape";
    case OpKind::gather_rows: return "gather_rows";
    case OpKind::chamfer: return "chamfer";
  }
  return "?";
}

const Tensor& Gradients::at(NodeId id) const {
  if (!contains(id)) {
    throw DomainError("no gradient recorded for node " + std::to_string(id));
  }
  return *grads_[id];
}

/// Per-node adjoint buffers, allocated lazily during the reverse pass.
struct Graph::Backprop {
  explicit Backprop(const Graph& g)
      : graph(g), adj(g.size()), present(g.size(), false) {}

  std::vector<double>& accum(NodeId id) {
    if (!present[id]) {
      adj[id].assign(graph.node(id).value.numel(), 0.0);
      present[id] = true;
    }
    return adj[id];
  }

  const Graph& graph;
  std::vector<std::vector<double>> adj;
  std::vector<char> present;
};

const Graph::Node& Graph::node(NodeId id) const {
  if (id >= nodes_.size()) {
    throw DomainError("node id " + std::to_string(id) + " out of range");
  }
  return nodes_[id];
}

NodeId Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

const Tensor& Graph::value(NodeId id) const { return node(id).value; }

bool Graph::requires_grad(NodeId id) const { return node(id).requires_grad; }

OpKind Graph::kind(NodeId id) const { return node(id).kind; }

std::span<const NodeId> Graph::inputs(NodeId id) const {
  const Node& n = node(id);
  return {n.ins.data(), n.ins.size()};
}

NodeId Graph::leaf(Tensor value) {
  Node n;
  n.kind = OpKind::leaf;
  n.value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

NodeId Graph::constant(Tensor value) {
  Node n;
  n.kind = OpKind::constant;
  n.value = std::move(value);
  n.requires_grad = false;
  return push(std::move(n));
}

NodeId Graph::unary(OpKind kind, NodeId x, Tensor out,
                    std::function<void(std::span<const double>, Backprop&)> vjp) {
  Node n;
  n.kind = kind;
  n.value = std::move(out);
  n.ins = {x};
  n.requires_grad = node(x).requires_grad;
  if (n.requires_grad) n.vjp = std::move(vjp);
  return push(std::move(n));
}

NodeId Graph::matmul(NodeId a, NodeId b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows()) {
    throw DimensionError(std::string("matmul shape mismatch: ") +
                         A.shape_str() + " x " + B.shape_str());
  }
  const std::size_t m = A.rows(), k = A.cols(), p = B.cols();
  std::vector<double> out(m * p, 0.0);
  const double* ad = A.values().data();
  const double* bd = B.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t t = 0; t < k; ++t) {
      const double av = ad[i * k + t];
      if (av == 0.0) continue;
      const double* brow = bd + t * p;
      double* orow = out.data() + i * p;
      for (std::size_t j = 0; j < p; ++j) orow[j] += av * brow[j];
    }
  }
  Node n;
  n.kind = OpKind::matmul;
  n.value = Tensor::matrix(m, p, std::move(out));
  n.ins = {a, b};
  const bool a_req = node(a).requires_grad, b_req = node(b).requires_grad;
  n.requires_grad = a_req || b_req;
  if (n.requires_grad) {
    n.vjp = [a, b, A, B, m, k, p, a_req, b_req](std::span<const double> g,
                                                Backprop& bp) {
      if (a_req) {
        auto& da = bp.accum(a);  // dA = G * B^T
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < k; ++j) {
            double s = 0.0;
            const double* grow = g.data() + i * p;
            const double* brow = B.values().data() + j * p;
            for (std::size_t t = 0; t < p; ++t) s += grow[t] * brow[t];
            da[i * k + j] += s;
          }
        }
      }
      if (b_req) {
        auto& db = bp.accum(b);  // dB = A^T * G
        for (std::size_t t = 0; t < m; ++t) {
          const double* arow = A.values().data() + t * k;
          const double* grow = g.data() + t * p;
          for (std::size_t i = 0; i < k; ++i) {
            const double av = arow[i];
            if (av == 0.0) continue;
            double* drow = db.data() + i * p;
            for (std::size_t j = 0; j < p; ++j) drow[j] += av * grow[j];
          }
        }
      }
    };
  }
  return push(std::move(n));
}

NodeId Graph::elu(NodeId x) {
  const Tensor& X = value(x);
  std::vector<double> out(X.numel());
  for (std::size_t i = 0; i < X.numel(); ++i) {
    const double v = X.at(i);
    out[i] = v > 0.0 ? v : std::expm1(v);
  }
  Tensor Y(X.shape(), std::move(out));
  return unary(OpKind::elu, x, Y,
               [x, Y](std::span<const double> g, Backprop& bp) {
                 auto& dx = bp.accum(x);
                 for (std::size_t i = 0; i < g.size(); ++i) {
                   const double y = Y.at(i);
                   dx[i] += g[i] * (y > 0.0 ? 1.0 : y + 1.0);
                 }
               });
}

NodeId Graph::softmax(NodeId x) {
  const Tensor& X = value(x);
  if (X.numel() == 0) throw DomainError("softmax of empty input");
  if (X.rank() > 1 && X.rows() != 1 && X.cols() != 1) {
    throw DimensionError("softmax expects a vector, got " + X.shape_str());
  }
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < X.numel(); ++i) mx = std::max(mx, X.at(i));
  std::vector<double> out(X.numel());
  double z = 0.0;
  for (std::size_t i = 0; i < X.numel(); ++i) {
    out[i] = std::exp(X.at(i) - mx);
    z += out[i];
  }
  for (auto& v : out) v /= z;
  Tensor Y(X.shape(), std::move(out));
  return unary(OpKind::softmax, x, Y,
               [x, Y](std::span<const double> g, Backprop& bp) {
                 double dot = 0.0;
                 for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * Y.at(i);
                 auto& dx = bp.accum(x);
                 for (std::size_t i = 0; i < g.size(); ++i) {
                   dx[i] += Y.at(i) * (g[i] - dot);
                 }
               });
}

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!same_shape(a, b)) {
    throw DimensionError(std::string(op) + " shape mismatch: " +
                         a.shape_str() + " vs " + b.shape_str());
  }
}

}  // namespace

NodeId Graph::hadamard(NodeId a, NodeId b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  require_same_shape("hadamard", A, B);
  std::vector<double> out(A.numel());
  for (std::size_t i = 0; i < A.numel(); ++i) out[i] = A.at(i) * B.at(i);
  Node n;
  n.kind = OpKind::hadamard;
  n.value = Tensor(A.shape(), std::move(out));
  n.ins = {a, b};
  const bool a_req = node(a).requires_grad, b_req = node(b).requires_grad;
  n.requires_grad = a_req || b_req;
  if (n.requires_grad) {
    n.vjp = [a, b, A, B, a_req, b_req](std::span<const double> g, Backprop& bp) {
      if (a_req) {
        auto& da = bp.accum(a);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * B.at(i);
      }
      if (b_req) {
        auto& db = bp.accum(b);
        for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * A.at(i);
      }
    };
  }
  return push(std::move(n));
}

NodeId Graph::concat(NodeId a, NodeId b, int axis) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (axis != 0 && axis != 1) {
    throw DimensionError("concat axis must be 0 or 1");
  }
  Tensor out;
  if (A.rank() <= 1 && B.rank() <= 1) {
    if (axis != 0) throw DimensionError("concat of vectors requires axis 0");
    std::vector<double> v;
    v.reserve(A.numel() + B.numel());
    v.insert(v.end(), A.values().begin(), A.values().end());
    v.insert(v.end(), B.values().begin(), B.values().end());
    out = Tensor::vector(std::move(v));
  } else if (A.rank() == 2 && B.rank() == 2) {
    if (axis == 0) {
      if (A.cols() != B.cols()) {
        throw DimensionError("concat axis 0 column mismatch: " + A.shape_str() +
                             " vs " + B.shape_str());
      }
      std::vector<double> v;
      v.reserve(A.numel() + B.numel());
      v.insert(v.end(), A.values().begin(), A.values().end());
      v.insert(v.end(), B.values().begin(), B.values().end());
      out = Tensor::matrix(A.rows() + B.rows(), A.cols(), std::move(v));
    } else {
      if (A.rows() != B.rows()) {
        throw DimensionError("concat axis 1 row mismatch: " + A.shape_str() +
                             " vs " + B.shape_str());
      }
      const std::size_t rows = A.rows(), ca = A.cols(), cb = B.cols();
      std::vector<double> v(rows * (ca + cb));
      for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < ca; ++j) v[i * (ca + cb) + j] = A.at(i, j);
        for (std::size_t j = 0; j < cb; ++j) {
          v[i * (ca + cb) + ca + j] = B.at(i, j);
        }
      }
      out = Tensor::matrix(rows, ca + cb, std::move(v));
    }
  } else {
    throw DimensionError("concat rank mismatch: " + A.shape_str() + " vs " +
                         B.shape_str());
  }
  Node n;
  n.kind = OpKind::concat;
  n.value = std::move(out);
  n.ins = {a, b};
  const bool a_req = node(a).requires_grad, b_req = node(b).requires_grad;
  n.requires_grad = a_req || b_req;
  if (n.requires_grad) {
    const std::size_t na = A.numel();
    const std::size_t rows = A.rank() == 2 ? A.rows() : 1;
    const std::size_t ca = A.rank() == 2 ? A.cols() : A.numel();
    const std::size_t cb = B.rank() == 2 ? B.cols() : B.numel();
    n.vjp = [a, b, axis, na, rows, ca, cb, a_req, b_req](
                std::span<const double> g, Backprop& bp) {
      if (axis == 0) {
        if (a_req) {
          auto& da = bp.accum(a);
          for (std::size_t i = 0; i < na; ++i) da[i] += g[i];
        }
        if (b_req) {
          auto& db = bp.accum(b);
          for (std::size_t i = 0; i < g.size() - na; ++i) db[i] += g[na + i];
        }
      } else {
        const std::size_t cw = ca + cb;
        if (a_req) {
          auto& da = bp.accum(a);
          for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < ca; ++j) da[i * ca + j] += g[i * cw + j];
          }
        }
        if (b_req) {
          auto& db = bp.accum(b);
          for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < cb; ++j) {
              db[i * cb + j] += g[i * cw + ca + j];
            }
          }
        }
      }
    };
  }
  return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) { return scale_add(a, b, 1.0); }

NodeId Graph::sub(NodeId a, NodeId b) { return scale_add(a, b, -1.0); }

NodeId Graph::scale_add(NodeId a, NodeId b, double alpha) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  require_same_shape("scale_add", A, B);
  std::vector<double> out(A.numel());
  for (std::size_t i = 0; i < A.numel(); ++i) out[i] = A.at(i) + alpha * B.at(i);
  Node n;
  n.kind = alpha == 1.0   ? OpKind::add
           : alpha == -1.0 ? OpKind::sub
                           : OpKind::scale_add;
  n.value = Tensor(A.shape(), std::move(out));
  n.ins = {a, b};
  const bool a_req = node(a).requires_grad, b_req = node(b).requires_grad;
  n.requires_grad = a_req || b_req;
  if (n.requires_grad) {
    n.vjp = [a, b, alpha, a_req, b_req](std::span<const double> g, Backprop& bp) {
      if (a_req) {
        auto& da = bp.accum(a);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
      }
      if (b_req) {
        auto& db = bp.accum(b);
        for (std::size_t i = 0; i < g.size(); ++i) db[i] += alpha * g[i];
      }
    };
  }
  return push(std::move(n));
}

NodeId Graph::scale(NodeId a, double alpha) {
  const Tensor& A = value(a);
  std::vector<double> out(A.numel());
  for (std::size_t i = 0; i < A.numel(); ++i) out[i] = alpha * A.at(i);
  return unary(OpKind::scale, a, Tensor(A.shape(), std::move(out)),
               [a, alpha](std::span<const double> g, Backprop& bp) {
                 auto& da = bp.accum(a);
                 for (std::size_t i = 0; i < g.size(); ++i) da[i] += alpha * g[i];
               });
}

NodeId Graph::add_scalar(NodeId a, double c) {
  const Tensor& A = value(a);
  std::vector<double> out(A.numel());
  for (std::size_t i = 0; i < A.numel(); ++i) out[i] = A.at(i) + c;
  return unary(OpKind::add_scalar, a, Tensor(A.shape(), std::move(out)),
               [a](std::span<const double> g, Backprop& bp) {
                 auto& da = bp.accum(a);
                 for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
               });
}

NodeId Graph::sum(NodeId x) {
  const Tensor& X = value(x);
  double s = 0.0;
  for (std::size_t i = 0; i < X.numel(); ++i) s += X.at(i);
  return unary(OpKind::sum, x, Tensor::scalar(s),
               [x](std::span<const double> g, Backprop& bp) {
                 auto& dx = bp.accum(x);
                 for (auto& v : dx) v += g[0];
               });
}

NodeId Graph::mean(NodeId x) {
  const Tensor& X = value(x);
  if (X.numel() == 0) throw DomainError("mean of empty tensor");
  double s = 0.0;
  for (std::size_t i = 0; i < X.numel(); ++i) s += X.at(i);
  const double inv = 1.0 / static_cast<double>(X.numel());
  return unary(OpKind::mean, x, Tensor::scalar(s * inv),
               [x, inv](std::span<const double> g, Backprop& bp) {
                 auto& dx = bp.accum(x);
                 for (auto& v : dx) v += g[0] * inv;
               });
}

namespace {

void require_rowvec(const char* op, const Tensor& m, const Tensor& v) {
  if (m.rank() != 2 || v.numel() != m.cols()) {
    throw DimensionError(std::string(op) + " shape mismatch: " + m.shape_str() +
                         " vs " + v.shape_str());
  }
}

}  // namespace

NodeId Graph::add_rowvec(NodeId m, NodeId v) {
  const Tensor& M = value(m);
  const Tensor& V = value(v);
  require_rowvec("add_rowvec", M, V);
  const std::size_t rows = M.rows(), cols = M.cols();
  std::vector<double> out(M.numel());
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = M.at(i, j) + V.at(j);
  }
  Node n;
  n.kind = OpKind::add_rowvec;
  n.value = Tensor(M.shape(), std::move(out));
  n.ins = {m, v};
  const bool m_req = node(m).requires_grad, v_req = node(v).requires_grad;
  n.requires_grad = m_req || v_req;
  if (n.requires_grad) {
    n.vjp = [m, v, rows, cols, m_req, v_req](std::span<const double> g,
                                             Backprop& bp) {
      if (m_req) {
        auto& dm = bp.accum(m);
        for (std::size_t i = 0; i < g.size(); ++i) dm[i] += g[i];
      }
      if (v_req) {
        auto& dv = bp.accum(v);
        for (std::size_t i = 0; i < rows; ++i) {
          for (std::size_t j = 0; j < cols; ++j) dv[j] += g[i * cols + j];
        }
      }
    };
  }
  return push(std::move(n));
}

NodeId Graph::sub_rowvec(NodeId m, NodeId v) {
  const Tensor& M = value(m);
  const Tensor& V = value(v);
  require_rowvec("sub_rowvec", M, V);
  const std::size_t rows = M.rows(), cols = M.cols();
  std::vector<double> out(M.numel());
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = M.at(i, j) - V.at(j);
  }
  Node n;
  n.kind = OpKind::sub_rowvec;
  n.value = Tensor(M.shape(), std::move(out));
  n.ins = {m, v};
  const bool m_req = node(m).requires_grad, v_req = node(v).requires_grad;
  n.requires_grad = m_req || v_req;
  if (n.requires_grad) {
    n.vjp = [m, v, rows, cols, m_req, v_req](std::span<const double> g,
                                             Backprop& bp) {
      if (m_req) {
        auto& dm = bp.accum(m);
        for (std::size_t i = 0; i < g.size(); ++i) dm[i] += g[i];
      }
      if (v_req) {
        auto& dv = bp.accum(v);
        for (std::size_t i = 0; i < rows; ++i) {
          for (std::size_t j = 0; j < cols; ++j) dv[j] -= g[i * cols + j];
        }
      }
    };
  }
  return push(std::move(n));
}

NodeId Graph::mul_rowvec(NodeId m, NodeId v) {
  const Tensor& M = value(m);
  const Tensor& V = value(v);
  require_rowvec("mul_rowvec", M, V);
  const std::size_t rows = M.rows(), cols = M.cols();
  std::vector<double> out(M.numel());
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = M.at(i, j) * V.at(j);
  }
  Node n;
  n.kind = OpKind::mul_rowvec;
  n.value = Tensor(M.shape(), std::move(out));
  n.ins = {m, v};
  const bool m_req = node(m).requires_grad, v_req = node(v).requires_grad;
  n.requires_grad = m_req || v_req;
  if (n.requires_grad) {
    n.vjp = [m, v, M, V, rows, cols, m_req, v_req](std::span<const double> g,
                                                   Backprop& bp) {
      if (m_req) {
        auto& dm = bp.accum(m);
        for (std::size_t i = 0; i < rows; ++i) {
          for (std::size_t j = 0; j < cols; ++j) {
            dm[i * cols + j] += g[i * cols + j] * V.at(j);
          }
        }
      }
      if (v_req) {
        auto& dv = bp.accum(v);
        for (std::size_t i = 0; i < rows; ++i) {
          for (std::size_t j = 0; j < cols; ++j) {
            dv[j] += g[i * cols + j] * M.at(i, j);
          }
        }
      }
    };
  }
  return push(std::move(n));
}

NodeId Graph::square(NodeId x) {
  const Tensor& X = value(x);
  std::vector<double> out(X.numel());
  for (std::size_t i = 0; i < X.numel(); ++i) out[i] = X.at(i) * X.at(i);
  return unary(OpKind::square, x, Tensor(X.shape(), std::move(out)),
               [x, X](std::span<const double> g, Backprop& bp) {
                 auto& dx = bp.accum(x);
                 for (std::size_t i = 0; i < g.size(); ++i) {
                   dx[i] += 2.0 * X.at(i) * g[i];
                 }
               });
}

NodeId Graph::sqrt(NodeId x) {
  const Tensor& X = value(x);
  std::vector<double> out(X.numel());
  for (std::size_t i = 0; i < X.numel(); ++i) {
    const double v = X.at(i);
    if (v < 0.0) throw DomainError("sqrt of negative value");
    out[i] = std::sqrt(v);
  }
  Tensor Y(X.shape(), std::move(out));
  return unary(OpKind::sqrt, x, Y,
               [x, Y](std::span<const double> g, Backprop& bp) {
                 auto& dx = bp.accum(x);
                 for (std::size_t i = 0; i < g.size(); ++i) {
                   const double y = Y.at(i);
                   if (y > 0.0) dx[i] += g[i] / (2.0 * y);
                 }
               });
}

NodeId Graph::log(NodeId x) {
  const Tensor& X = value(x);
  std::vector<double> out(X.numel());
  for (std::size_t i = 0; i < X.numel(); ++i) {
    if (X.at(i) <= 0.0) throw DomainError("log of non-positive value");
    out[i] = std::log(X.at(i));
  }
  return unary(OpKind::log, x, Tensor(X.shape(), std::move(out)),
               [x, X](std::span<const double> g, Backprop& bp) {
                 auto& dx = bp.accum(x);
                 for (std::size_t i = 0; i < g.size(); ++i) {
                   dx[i] += g[i] / X.at(i);
                 }
               });
}

NodeId Graph::recip(NodeId x) {
  const Tensor& X = value(x);
  std::vector<double> out(X.numel());
  for (std::size_t i = 0; i < X.numel(); ++i) {
    if (X.at(i) == 0.0) throw DomainError("recip of zero");
    out[i] = 1.0 / X.at(i);
  }
  Tensor Y(X.shape(), std::move(out));
  return unary(OpKind::recip, x, Y,
               [x, Y](std::span<const double> g, Backprop& bp) {
                 auto& dx = bp.accum(x);
                 for (std::size_t i = 0; i < g.size(); ++i) {
                   dx[i] -= g[i] * Y.at(i) * Y.at(i);
                 }
               });
}

NodeId Graph::clamp_min(NodeId x, double lo) {
  const Tensor& X = value(x);
  std::vector<double> out(X.numel());
  for (std::size_t i = 0; i < X.numel(); ++i) out[i] = std::max(X.at(i), lo);
  return unary(OpKind::clamp_min, x, Tensor(X.shape(), std::move(out)),
               [x, X, lo](std::span<const double> g, Backprop& bp) {
                 auto& dx = bp.accum(x);
                 for (std::size_t i = 0; i < g.size(); ++i) {
                   if (X.at(i) >= lo) dx[i] += g[i];
                 }
               });
}

NodeId Graph::reshape(NodeId x, std::vector<std::size_t> shape) {
  const Tensor& X = value(x);
  Tensor Y(std::move(shape),
           std::vector<double>(X.values().begin(), X.values().end()));
  if (Y.numel() != X.numel()) {
    throw DimensionError("reshape changes element count: " + X.shape_str() +
                         " -> " + Y.shape_str());
  }
  return unary(OpKind::reshape, x, std::move(Y),
               [x](std::span<const double> g, Backprop& bp) {
                 auto& dx = bp.accum(x);
                 for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
               });
}

NodeId Graph::gather_rows(NodeId table, std::vector<std::size_t> idx) {
  const Tensor& T = value(table);
  if (T.rank() != 2) {
    throw DimensionError("gather_rows expects a matrix, got " + T.shape_str());
  }
  const std::size_t cols = T.cols();
  std::vector<double> out(idx.size() * cols);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= T.rows()) {
      throw DomainError("gather_rows index " + std::to_string(idx[i]) +
                        " out of range for " + T.shape_str());
    }
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = T.at(idx[i], j);
  }
  Tensor Y = Tensor::matrix(idx.size(), cols, std::move(out));
  return unary(OpKind::gather_rows, table, std::move(Y),
               [table, idx = std::move(idx), cols](std::span<const double> g,
                                                   Backprop& bp) {
                 auto& dt = bp.accum(table);
                 for (std::size_t i = 0; i < idx.size(); ++i) {
                   for (std::size_t j = 0; j < cols; ++j) {
                     dt[idx[i] * cols + j] += g[i * cols + j];
                   }
                 }
               });
}

NodeId Graph::chamfer(NodeId a, NodeId b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.cols()) {
    throw DimensionError("chamfer shape mismatch: " + A.shape_str() + " vs " +
                         B.shape_str());
  }
  if (A.rows() == 0 || B.rows() == 0) {
    throw DomainError("chamfer of empty point set");
  }
  const std::size_t na = A.rows(), nb = B.rows(), d = A.cols();
  auto sqdist = [&](std::size_t i, std::size_t j) {
    double s = 0.0;
    for (std::size_t t = 0; t < d; ++t) {
      const double diff = A.at(i, t) - B.at(j, t);
      s += diff * diff;
    }
    return s;
  };
  std::vector<std::size_t> nn_ab(na), nn_ba(nb);
  double total = 0.0;
  for (std::size_t i = 0; i < na; ++i) {
    double best = sqdist(i, 0);
    std::size_t arg = 0;
    for (std::size_t j = 1; j < nb; ++j) {
      const double v = sqdist(i, j);
      if (v < best) {
        best = v;
        arg = j;
      }
    }
    nn_ab[i] = arg;
    total += best;
  }
  for (std::size_t j = 0; j < nb; ++j) {
    double best = sqdist(0, j);
    std::size_t arg = 0;
    for (std::size_t i = 1; i < na; ++i) {
      const double v = sqdist(i, j);
      if (v < best) {
        best = v;
        arg = i;
      }
    }
    nn_ba[j] = arg;
    total += best;
  }
  Node n;
  n.kind = OpKind::chamfer;
  n.value = Tensor::scalar(total);
  n.ins = {a, b};
  const bool a_req = node(a).requires_grad, b_req = node(b).requires_grad;
  n.requires_grad = a_req || b_req;
  if (n.requires_grad) {
    n.vjp = [a, b, A, B, nn_ab = std::move(nn_ab), nn_ba = std::move(nn_ba), d,
             a_req, b_req](std::span<const double> g, Backprop& bp) {
      const double s = 2.0 * g[0];
      std::vector<double>* da = a_req ? &bp.accum(a) : nullptr;
      std::vector<double>* db = b_req ? &bp.accum(b) : nullptr;
      auto route = [&](std::size_t i, std::size_t j) {
        for (std::size_t t = 0; t < d; ++t) {
          const double diff = A.at(i, t) - B.at(j, t);
          if (da) (*da)[i * d + t] += s * diff;
          if (db) (*db)[j * d + t] -= s * diff;
        }
      };
      for (std::size_t i = 0; i < nn_ab.size(); ++i) route(i, nn_ab[i]);
      for (std::size_t j = 0; j < nn_ba.size(); ++j) route(nn_ba[j], j);
    };
  }
  return push(std::move(n));
}

Gradients Graph::backward(NodeId loss) const {
  const Node& loss_node = node(loss);
  if (!loss_node.value.is_scalar()) {
    throw DomainError("backward requires a scalar loss node, shape is " +
                      loss_node.value.shape_str());
  }
  Backprop bp(*this);
  bp.accum(loss)[0] = 1.0;
  for (NodeId id = loss;; --id) {
    const Node& n = nodes_[id];
    if (n.requires_grad && bp.present[id] && n.vjp) {
      n.vjp({bp.adj[id].data(), bp.adj[id].size()}, bp);
    }
    if (id == 0) break;
  }
  Gradients result;
  result.grads_.resize(nodes_.size());
  for (NodeId id = 0; id < nodes_.size(); ++id) {
    const Node& n = nodes_[id];
    if (!n.requires_grad) continue;
    if (bp.present[id]) {
      result.grads_[id] = Tensor(n.value.shape(), std::move(bp.adj[id]));
    } else if (n.kind == OpKind::leaf) {
      result.grads_[id] = Tensor::zeros(n.value.shape());
    }
  }
  return result;
}

}  // namespace qilcm::diff
