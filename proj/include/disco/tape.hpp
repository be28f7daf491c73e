#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "disco/tensor.hpp"

namespace disco {

struct TapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Value {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& tensor() const;
  const std::vector<std::size_t>& shape() const { return tensor().shape(); }
  double scalar() const;
};

// Reverse-mode tape. Nodes are appended in evaluation order, which is a
// topological order of the DAG; backward() visits them once in reverse.
class Tape {
public:
  struct Node {
    Tensor value;
    Tensor grad;                      // allocated lazily in backward()
    bool grad_alloc = false;
    std::vector<std::size_t> inputs;
    std::function<void(Tape&, std::size_t)> back;  // may be empty (leaf)
  };

  std::size_t num_nodes() const { return nodes_.size(); }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }

  // Gradient of the last backward() target with respect to node id.
  // Zero tensor if the node was never reached.
  Tensor grad(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.grad_alloc ? n.grad : Tensor::zeros(n.value.shape());
  }

  Value leaf(Tensor t) {
    nodes_.push_back(Node{std::move(t), Tensor(), false, {}, nullptr});
    return Value{this, nodes_.size() - 1};
  }

  Value constant(Tensor t) { return leaf(std::move(t)); }

  // ---- elementwise ----

  Value add(Value a, Value b) { return binary_elementwise("add", a, b, /*sub=*/false); }
  Value sub(Value a, Value b) { return binary_elementwise("subtract", a, b, /*sub=*/true); }

  Value mul(Value a, Value b) {
    check_same(a, b, "multiply");
    Tensor out = at(a).value;
    const Tensor& bv = at(b).value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    return emit(std::move(out), {a.id, b.id}, [](Tape& t, std::size_t self) {
      Node& n = t.nodes_[self];
      const Tensor& g = n.grad;
      const Tensor& av = t.nodes_[n.inputs[0]].value;
      const Tensor& bv2 = t.nodes_[n.inputs[1]].value;
      Tensor& ga = t.grad_ref(n.inputs[0]);
      Tensor& gb = t.grad_ref(n.inputs[1]);
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i] * bv2[i];
        gb[i] += g[i] * av[i];
      }
    });
  }

  Value scale(Value a, double c) {
    Tensor out = at(a).value;
    for (double& v : out.vec()) v *= c;
    return emit(std::move(out), {a.id}, [c](Tape& t, std::size_t self) {
      Node& n = t.nodes_[self];
      Tensor& ga = t.grad_ref(n.inputs[0]);
      for (std::size_t i = 0; i < n.grad.size(); ++i) ga[i] += c * n.grad[i];
    });
  }

  Value silu(Value a) {
    Tensor out = at(a).value;
    for (double& v : out.vec()) v *= sigmoid(v);
    return emit(std::move(out), {a.id}, [](Tape& t, std::size_t self) {
      Node& n = t.nodes_[self];
      const Tensor& x = t.nodes_[n.inputs[0]].value;
      Tensor& ga = t.grad_ref(n.inputs[0]);
      for (std::size_t i = 0; i < x.size(); ++i) {
        double s = sigmoid(x[i]);
        ga[i] += n.grad[i] * s * (1.0 + x[i] * (1.0 - s));
      }
    });
  }

  // ---- linear algebra ----

  Value matmul(Value a, Value b) {
    const Tensor& av = at(a).value;
    const Tensor& bv = at(b).value;
    if (av.ndim() != 2 || bv.ndim() != 2 || av.cols() != bv.rows())
      throw TapeError("matmul: incompatible shapes " + av.shape_str() + " x " + bv.shape_str());
    Tensor out = Tensor::zeros({av.rows(), bv.cols()});
    gemm(av, bv, out, false, false);
    return emit(std::move(out), {a.id, b.id}, [](Tape& t, std::size_t self) {
      Node& n = t.nodes_[self];
      const Tensor& g = n.grad;
      const Tensor& av2 = t.nodes_[n.inputs[0]].value;
      const Tensor& bv2 = t.nodes_[n.inputs[1]].value;
      gemm(g, bv2, t.grad_ref(n.inputs[0]), false, true);   // dA = G B^T
      gemm(av2, g, t.grad_ref(n.inputs[1]), true, false);   // dB = A^T G
    });
  }

  // y = x W + b with b broadcast over rows; x: (n,in), W: (in,out), b: (out).
  Value affine(Value x, Value w, Value b) {
    const Tensor& xv = at(x).value;
    const Tensor& wv = at(w).value;
    const Tensor& bv = at(b).value;
    if (xv.ndim() != 2 || wv.ndim() != 2 || xv.cols() != wv.rows())
      throw TapeError("affine: incompatible shapes " + xv.shape_str() + " x " + wv.shape_str());
    if (bv.size() != wv.cols())
      throw TapeError("affine: bias shape " + bv.shape_str() + " does not match output width " +
                      std::to_string(wv.cols()));
    Tensor out = Tensor::zeros({xv.rows(), wv.cols()});
    gemm(xv, wv, out, false, false);
    for (std::size_t i = 0; i < out.rows(); ++i)
      for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += bv[j];
    return emit(std::move(out), {x.id, w.id, b.id}, [](Tape& t, std::size_t self) {
      Node& n = t.nodes_[self];
      const Tensor& g = n.grad;
      const Tensor& xv2 = t.nodes_[n.inputs[0]].value;
      const Tensor& wv2 = t.nodes_[n.inputs[1]].value;
      gemm(g, wv2, t.grad_ref(n.inputs[0]), false, true);
      gemm(xv2, g, t.grad_ref(n.inputs[1]), true, false);
      Tensor& gb = t.grad_ref(n.inputs[2]);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) gb[j] += g(i, j);
    });
  }

  // ---- row-wise softmax family (last axis of a 2-D tensor) ----

  Value softmax(Value a) {
    const Tensor& av = at(a).value;
    Tensor out = softmax_forward(av);
    return emit(std::move(out), {a.id}, [](Tape& t, std::size_t self) {
      Node& n = t.nodes_[self];
      const Tensor& y = n.value;
      const Tensor& g = n.grad;
      Tensor& ga = t.grad_ref(n.inputs[0]);
      std::size_t rows = y.rows(), cols = y.cols();
      for (std::size_t i = 0; i < rows; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < cols; ++j) dot += g(i, j) * y(i, j);
        for (std::size_t j = 0; j < cols; ++j) ga[i * cols + j] += y(i, j) * (g(i, j) - dot);
      }
    });
  }

  Value log_softmax(Value a) {
    const Tensor& av = at(a).value;
    Tensor sm = softmax_forward(av);
    Tensor out = sm;
    for (double& v : out.vec()) v = std::log(v);
    return emit(std::move(out), {a.id}, [](Tape& t, std::size_t self) {
      Node& n = t.nodes_[self];
      const Tensor& x = t.nodes_[n.inputs[0]].value;
      Tensor sm2 = softmax_forward(x);
      const Tensor& g = n.grad;
      Tensor& ga = t.grad_ref(n.inputs[0]);
      std::size_t rows = x.rows(), cols = x.cols();
      for (std::size_t i = 0; i < rows; ++i) {
        double gs = 0.0;
        for (std::size_t j = 0; j < cols; ++j) gs += g(i, j);
        for (std::size_t j = 0; j < cols; ++j)
          ga[i * cols + j] += g(i, j) - sm2(i, j) * gs;
      }
    });
  }

  // ---- reductions ----

  Value sum(Value a) {
    double s = 0.0;
    for (double v : at(a).value.vec()) s += v;
    return emit(Tensor::scalar(s), {a.id}, [](Tape& t, std::size_t self) {
      Node& n = t.nodes_[self];
      double g = n.grad[0];
      Tensor& ga = t.grad_ref(n.inputs[0]);
      for (double& v : ga.vec()) v += g;
    });
  }

  Value mean(Value a) {
    std::size_t n = at(a).value.size();
    double s = 0.0;
    for (double v : at(a).value.vec()) s += v;
    return emit(Tensor::scalar(s / static_cast<double>(n)), {a.id},
                [n](Tape& t, std::size_t self) {
      Node& nd = t.nodes_[self];
      double g = nd.grad[0] / static_cast<double>(n);
      Tensor& ga = t.grad_ref(nd.inputs[0]);
      for (double& v : ga.vec()) v += g;
    });
  }

  Value squared_l2(Value a) {
    double s = 0.0;
    for (double v : at(a).value.vec()) s += v * v;
    return emit(Tensor::scalar(s), {a.id}, [](Tape& t, std::size_t self) {
      Node& n = t.nodes_[self];
      double g = n.grad[0];
      const Tensor& x = t.nodes_[n.inputs[0]].value;
      Tensor& ga = t.grad_ref(n.inputs[0]);
      for (std::size_t i = 0; i < x.size(); ++i) ga[i] += 2.0 * g * x[i];
    });
  }

  // ---- structure ----

  Value concat(Value a, Value b) {
    const Tensor& av = at(a).value;
    const Tensor& bv = at(b).value;
    if (av.ndim() != 2 || bv.ndim() != 2 || av.rows() != bv.rows())
      throw TapeError("concatenate: row mismatch " + av.shape_str() + " vs " + bv.shape_str());
    std::size_t rows = av.rows(), ca = av.cols(), cb = bv.cols();
    Tensor out = Tensor::zeros({rows, ca + cb});
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < ca; ++j) out(i, j) = av(i, j);
      for (std::size_t j = 0; j < cb; ++j) out(i, ca + j) = bv(i, j);
    }
    return emit(std::move(out), {a.id, b.id}, [ca, cb, rows](Tape& t, std::size_t self) {
      Node& n = t.nodes_[self];
      const Tensor& g = n.grad;
      Tensor& ga = t.grad_ref(n.inputs[0]);
      Tensor& gb = t.grad_ref(n.inputs[1]);
      for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < ca; ++j) ga[i * ca + j] += g(i, j);
        for (std::size_t j = 0; j < cb; ++j) gb[i * cb + j] += g(i, ca + j);
      }
    });
  }

  // Scalar pick: sum(x .* onehot) without materializing the mask caller-side.
  Value select(Value a, std::size_t flat_index) {
    const Tensor& av = at(a).value;
    if (flat_index >= av.size()) throw TapeError("select: index out of range");
    return emit(Tensor::scalar(av[flat_index]), {a.id},
                [flat_index](Tape& t, std::size_t self) {
      Node& n = t.nodes_[self];
      t.grad_ref(n.inputs[0])[flat_index] += n.grad[0];
    });
  }

  // ---- backward ----

  void backward(Value loss) {
    const Tensor& lv = at(loss).value;
    if (lv.size() != 1)
      throw TapeError("backward: loss must be scalar, got shape " + lv.shape_str());
    if (!lv.all_finite()) throw TapeError("backward: loss is not finite");
    for (Node& n : nodes_) {
      n.grad_alloc = false;
    }
    grad_ref(loss.id)[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.back && n.grad_alloc) n.back(*this, i);
    }
  }

private:
  friend struct Value;

  std::vector<Node> nodes_;

  Node& at(Value v) {
    if (v.tape != this) throw TapeError("value belongs to a different tape");
    return nodes_[v.id];
  }

  Tensor& grad_ref(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.grad_alloc) {
      n.grad = Tensor::zeros(n.value.shape());
      n.grad_alloc = true;
    }
    return n.grad;
  }

  Value emit(Tensor out, std::vector<std::size_t> inputs,
             std::function<void(Tape&, std::size_t)> back) {
    nodes_.push_back(Node{std::move(out), Tensor(), false, std::move(inputs), std::move(back)});
    return Value{this, nodes_.size() - 1};
  }

  Value binary_elementwise(const char* name, Value a, Value b, bool sub) {
    check_same(a, b, name);
    Tensor out = at(a).value;
    const Tensor& bv = at(b).value;
    if (sub)
      for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    else
      for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return emit(std::move(out), {a.id, b.id}, [sub](Tape& t, std::size_t self) {
      Node& n = t.nodes_[self];
      Tensor& ga = t.grad_ref(n.inputs[0]);
      Tensor& gb = t.grad_ref(n.inputs[1]);
      double sb = sub ? -1.0 : 1.0;
      for (std::size_t i = 0; i < n.grad.size(); ++i) {
        ga[i] += n.grad[i];
        gb[i] += sb * n.grad[i];
      }
    });
  }

  void check_same(Value a, Value b, const char* name) {
    const Tensor& av = at(a).value;
    const Tensor& bv = at(b).value;
    if (!av.same_shape(bv))
      throw TapeError(std::string(name) + ": shape mismatch " + av.shape_str() + " vs " +
                      bv.shape_str());
  }

  static double sigmoid(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }

  static Tensor softmax_forward(const Tensor& x) {
    if (x.ndim() != 2) throw TapeError("softmax: expected 2-D tensor, got " + x.shape_str());
    Tensor out = x;
    std::size_t rows = x.rows(), cols = x.cols();
    for (std::size_t i = 0; i < rows; ++i) {
      double mx = out(i, 0);
      for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, out(i, j));
      double s = 0.0;
      for (std::size_t j = 0; j < cols; ++j) {
        double e = std::exp(out(i, j) - mx);
        out(i, j) = e;
        s += e;
      }
      for (std::size_t j = 0; j < cols; ++j) out(i, j) /= s;
    }
    return out;
  }

  // C += op(A) * op(B); accumulating form shared by forward and backward.
  static void gemm(const Tensor& a, const Tensor& b, Tensor& c, bool ta, bool tb) {
    std::size_t m = ta ? a.cols() : a.rows();
    std::size_t k = ta ? a.rows() : a.cols();
    std::size_t n = tb ? b.rows() : b.cols();
    const double* ap = a.data();
    const double* bp = b.data();
    double* cp = c.data();
    std::size_t lda = a.cols(), ldb = b.cols(), ldc = c.cols();
    if (!ta && !tb) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double av = ap[i * lda + p];
          const double* brow = bp + p * ldb;
          double* crow = cp + i * ldc;
          for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    } else if (!ta && tb) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          double s = 0.0;
          const double* arow = ap + i * lda;
          const double* brow = bp + j * ldb;
          for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
          cp[i * ldc + j] += s;
        }
    } else if (ta && !tb) {
      for (std::size_t p = 0; p < k; ++p)
        for (std::size_t i = 0; i < m; ++i) {
          double av = ap[p * lda + i];
          const double* brow = bp + p * ldb;
          double* crow = cp + i * ldc;
          for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    } else {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          double s = 0.0;
          for (std::size_t p = 0; p < k; ++p) s += ap[p * lda + i] * bp[j * ldb + p];
          cp[i * ldc + j] += s;
        }
    }
  }
};

inline const Tensor& Value::tensor() const { return tape->value(id); }

inline double Value::scalar() const {
  const Tensor& t = tensor();
  if (t.size() != 1) throw TapeError("scalar() on non-scalar value " + t.shape_str());
  return t[0];
}

}  // namespace disco
