#include "gtrans/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

namespace gtrans {

namespace {

using EMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Map = Eigen::Map<EMat>;
using CMap = Eigen::Map<const EMat>;

Map map2d(Tensor& t) { return Map(t.data(), t.dim(0), t.dim(1)); }
CMap map2d(const Tensor& t) { return CMap(t.data(), t.dim(0), t.dim(1)); }

void check_2d(const Tensor& t, const char* who) {
  if (t.ndim() != 2) throw ShapeError(std::string(who) + ": expected 2-D, got " + shape_str(t.shape()));
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* who) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(who) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

bool g_grad_enabled = true;

}  // namespace

int64_t numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ")";
  return os.str();
}

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
  data_.assign(static_cast<size_t>(numel(shape_)), 0.0);
}

Tensor::Tensor(std::vector<int> shape, Scalar fill) : shape_(std::move(shape)) {
  data_.assign(static_cast<size_t>(numel(shape_)), fill);
}

Tensor::Tensor(std::vector<int> shape, std::vector<Scalar> values) : shape_(std::move(shape)), data_(std::move(values)) {
  if (static_cast<int64_t>(data_.size()) != numel(shape_))
    throw ShapeError("Tensor: " + std::to_string(data_.size()) + " values for shape " + shape_str(shape_));
}

void Tensor::fill(Scalar v) { std::fill(data_.begin(), data_.end(), v); }

Scalar Tensor::max_value() const {
  Scalar m = -std::numeric_limits<Scalar>::infinity();
  for (Scalar v : data_) m = std::max(m, v);
  return m;
}

Scalar Tensor::sum() const {
  Scalar s = 0;
  for (Scalar v : data_) s += v;
  return s;
}

bool Tensor::all_finite() const {
  for (Scalar v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

Tensor randu(const std::vector<int>& shape, Scalar lo, Scalar hi, std::mt19937_64& rng) {
  Tensor t(shape);
  std::uniform_real_distribution<Scalar> dist(lo, hi);
  for (int64_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

Tensor randn(const std::vector<int>& shape, Scalar mean, Scalar stddev, std::mt19937_64& rng) {
  Tensor t(shape);
  std::normal_distribution<Scalar> dist(mean, stddev);
  for (int64_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

// ---------------------------------------------------------------------------
// Autograd plumbing
// ---------------------------------------------------------------------------

void Node::ensure_grad() {
  if (grad.empty()) grad = Tensor(value.shape());
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Var Var::wrap(NodePtr n) {
  Var v;
  v.node_ = std::move(n);
  return v;
}

void Var::zero_grad() {
  if (node_) node_->grad = Tensor();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev; }

namespace {

// Builds the output node, recording the tape edge only when some input needs it.
Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn) {
  bool track = false;
  if (g_grad_enabled)
    for (const Var& v : inputs)
      if (v.defined() && v.requires_grad()) track = true;
  Var out(std::move(value), track);
  if (track) {
    for (const Var& v : inputs)
      if (v.defined()) out.node()->inputs.push_back(v.node());
    out.node()->backward_fn = std::move(backward_fn);
  }
  return out;
}

}  // namespace

void backward(const Var& root) {
  if (!root.defined()) throw InvalidInputError("backward: undefined root");
  if (root.val().size() != 1) throw ShapeError("backward: root must be scalar");

  // Iterative topological order over the reachable tape.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      Node* child = n->inputs[next++].get();
      if (!seen.count(child)) {
        seen.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  root.node()->ensure_grad();
  root.node()->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

Var add(const Var& a, const Var& b) {
  check_same_shape(a.val(), b.val(), "add");
  Tensor out = a.val();
  for (int64_t i = 0; i < out.size(); ++i) out[i] += b.val()[i];
  return make_result(std::move(out), {a, b}, [](Node& n) {
    for (int k = 0; k < 2; ++k) {
      Node& in = *n.inputs[k];
      in.ensure_grad();
      for (int64_t i = 0; i < n.grad.size(); ++i) in.grad[i] += n.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a.val(), b.val(), "sub");
  Tensor out = a.val();
  for (int64_t i = 0; i < out.size(); ++i) out[i] -= b.val()[i];
  return make_result(std::move(out), {a, b}, [](Node& n) {
    Node& ia = *n.inputs[0];
    Node& ib = *n.inputs[1];
    ia.ensure_grad();
    ib.ensure_grad();
    for (int64_t i = 0; i < n.grad.size(); ++i) {
      ia.grad[i] += n.grad[i];
      ib.grad[i] -= n.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a.val(), b.val(), "mul");
  Tensor out = a.val();
  for (int64_t i = 0; i < out.size(); ++i) out[i] *= b.val()[i];
  return make_result(std::move(out), {a, b}, [](Node& n) {
    Node& ia = *n.inputs[0];
    Node& ib = *n.inputs[1];
    ia.ensure_grad();
    ib.ensure_grad();
    for (int64_t i = 0; i < n.grad.size(); ++i) {
      ia.grad[i] += n.grad[i] * ib.value[i];
      ib.grad[i] += n.grad[i] * ia.value[i];
    }
  });
}

Var scale(const Var& a, Scalar s) {
  Tensor out = a.val();
  for (int64_t i = 0; i < out.size(); ++i) out[i] *= s;
  return make_result(std::move(out), {a}, [s](Node& n) {
    Node& in = *n.inputs[0];
    in.ensure_grad();
    for (int64_t i = 0; i < n.grad.size(); ++i) in.grad[i] += s * n.grad[i];
  });
}

Var matmul(const Var& a, const Var& b) {
  check_2d(a.val(), "matmul");
  check_2d(b.val(), "matmul");
  if (a.val().dim(1) != b.val().dim(0))
    throw ShapeError("matmul: " + shape_str(a.val().shape()) + " x " + shape_str(b.val().shape()));
  Tensor out({a.val().dim(0), b.val().dim(1)});
  map2d(out).noalias() = map2d(a.val()) * map2d(b.val());
  return make_result(std::move(out), {a, b}, [](Node& n) {
    Node& ia = *n.inputs[0];
    Node& ib = *n.inputs[1];
    ia.ensure_grad();
    ib.ensure_grad();
    CMap g(n.grad.data(), n.grad.dim(0), n.grad.dim(1));
    map2d(ia.grad).noalias() += g * map2d(ib.value).transpose();
    map2d(ib.grad).noalias() += map2d(ia.value).transpose() * g;
  });
}

Var transpose(const Var& a) {
  check_2d(a.val(), "transpose");
  Tensor out({a.val().dim(1), a.val().dim(0)});
  map2d(out) = map2d(a.val()).transpose();
  return make_result(std::move(out), {a}, [](Node& n) {
    Node& in = *n.inputs[0];
    in.ensure_grad();
    CMap g(n.grad.data(), n.grad.dim(0), n.grad.dim(1));
    map2d(in.grad) += g.transpose();
  });
}

Var relu(const Var& a) {
  Tensor out = a.val();
  for (int64_t i = 0; i < out.size(); ++i) out[i] = std::max<Scalar>(out[i], 0.0);
  return make_result(std::move(out), {a}, [](Node& n) {
    Node& in = *n.inputs[0];
    in.ensure_grad();
    for (int64_t i = 0; i < n.grad.size(); ++i)
      if (in.value[i] > 0) in.grad[i] += n.grad[i];
  });
}

Var sum_all(const Var& a) {
  Tensor out({1});
  out[0] = a.val().sum();
  return make_result(std::move(out), {a}, [](Node& n) {
    Node& in = *n.inputs[0];
    in.ensure_grad();
    Scalar g = n.grad[0];
    for (int64_t i = 0; i < in.grad.size(); ++i) in.grad[i] += g;
  });
}

Var add_rowvec(const Var& m, const Var& v) {
  check_2d(m.val(), "add_rowvec");
  if (v.val().size() != m.val().dim(1))
    throw ShapeError("add_rowvec: vector length " + std::to_string(v.val().size()) +
                     " vs columns " + std::to_string(m.val().dim(1)));
  Tensor out = m.val();
  int rows = out.dim(0), cols = out.dim(1);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) out.at(r, c) += v.val()[c];
  return make_result(std::move(out), {m, v}, [](Node& n) {
    Node& im = *n.inputs[0];
    Node& iv = *n.inputs[1];
    im.ensure_grad();
    iv.ensure_grad();
    int rows = n.grad.dim(0), cols = n.grad.dim(1);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) {
        Scalar g = n.grad.at(r, c);
        im.grad.at(r, c) += g;
        iv.grad[c] += g;
      }
  });
}

Var add_colvec(const Var& m, const Var& v) {
  check_2d(m.val(), "add_colvec");
  if (v.val().size() != m.val().dim(0))
    throw ShapeError("add_colvec: vector length " + std::to_string(v.val().size()) +
                     " vs rows " + std::to_string(m.val().dim(0)));
  Tensor out = m.val();
  int rows = out.dim(0), cols = out.dim(1);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) out.at(r, c) += v.val()[r];
  return make_result(std::move(out), {m, v}, [](Node& n) {
    Node& im = *n.inputs[0];
    Node& iv = *n.inputs[1];
    im.ensure_grad();
    iv.ensure_grad();
    int rows = n.grad.dim(0), cols = n.grad.dim(1);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) {
        Scalar g = n.grad.at(r, c);
        im.grad.at(r, c) += g;
        iv.grad[r] += g;
      }
  });
}

namespace {

// axis=0: normalize each column over rows; axis=1: each row over columns.
Var softmax_axis(const Var& a, int axis) {
  check_2d(a.val(), "softmax");
  const Tensor& x = a.val();
  int rows = x.dim(0), cols = x.dim(1);
  Tensor out(x.shape());
  int slices = axis == 0 ? cols : rows;
  int len = axis == 0 ? rows : cols;
  auto idx = [&](int s, int k) { return axis == 0 ? k * cols + s : s * cols + k; };
  for (int s = 0; s < slices; ++s) {
    Scalar m = -std::numeric_limits<Scalar>::infinity();
    for (int k = 0; k < len; ++k) m = std::max(m, x[idx(s, k)]);
    Scalar z = 0;
    for (int k = 0; k < len; ++k) {
      Scalar e = std::exp(x[idx(s, k)] - m);
      out[idx(s, k)] = e;
      z += e;
    }
    for (int k = 0; k < len; ++k) out[idx(s, k)] /= z;
  }
  Tensor y = out;  // captured for the Jacobian product
  return make_result(std::move(out), {a}, [axis, y, slices, len, cols](Node& n) {
    Node& in = *n.inputs[0];
    in.ensure_grad();
    auto idx = [&](int s, int k) { return axis == 0 ? k * cols + s : s * cols + k; };
    for (int s = 0; s < slices; ++s) {
      Scalar dot = 0;
      for (int k = 0; k < len; ++k) dot += y[idx(s, k)] * n.grad[idx(s, k)];
      for (int k = 0; k < len; ++k)
        in.grad[idx(s, k)] += y[idx(s, k)] * (n.grad[idx(s, k)] - dot);
    }
  });
}

}  // namespace

Var softmax_cols(const Var& a) { return softmax_axis(a, 0); }
Var softmax_rows(const Var& a) { return softmax_axis(a, 1); }

Var layer_norm_cols(const Var& x, const Var& gain, const Var& offset, Scalar eps) {
  check_2d(x.val(), "layer_norm_cols");
  int d = x.val().dim(0), cols = x.val().dim(1);
  if (gain.val().size() != d || offset.val().size() != d)
    throw ShapeError("layer_norm_cols: gain/offset length vs rows " + std::to_string(d));
  Tensor xhat({d, cols});
  Tensor inv_sigma({cols});
  Tensor out({d, cols});
  for (int c = 0; c < cols; ++c) {
    Scalar mu = 0;
    for (int r = 0; r < d; ++r) mu += x.val().at(r, c);
    mu /= d;
    Scalar var = 0;
    for (int r = 0; r < d; ++r) {
      Scalar t = x.val().at(r, c) - mu;
      var += t * t;
    }
    var /= d;
    Scalar is = 1.0 / std::sqrt(var + eps);
    inv_sigma[c] = is;
    for (int r = 0; r < d; ++r) {
      Scalar xh = (x.val().at(r, c) - mu) * is;
      xhat.at(r, c) = xh;
      out.at(r, c) = gain.val()[r] * xh + offset.val()[r];
    }
  }
  return make_result(std::move(out), {x, gain, offset}, [xhat, inv_sigma, d, cols](Node& n) {
    Node& ix = *n.inputs[0];
    Node& ig = *n.inputs[1];
    Node& ib = *n.inputs[2];
    ix.ensure_grad();
    ig.ensure_grad();
    ib.ensure_grad();
    for (int c = 0; c < cols; ++c) {
      // g = dy * gain; dx = (g - mean(g) - xhat * mean(g*xhat)) / sigma
      Scalar mg = 0, mgx = 0;
      for (int r = 0; r < d; ++r) {
        Scalar dy = n.grad.at(r, c);
        Scalar g = dy * ig.value[r];
        mg += g;
        mgx += g * xhat.at(r, c);
        ig.grad[r] += dy * xhat.at(r, c);
        ib.grad[r] += dy;
      }
      mg /= d;
      mgx /= d;
      for (int r = 0; r < d; ++r) {
        Scalar g = n.grad.at(r, c) * ig.value[r];
        ix.grad.at(r, c) += (g - mg - xhat.at(r, c) * mgx) * inv_sigma[c];
      }
    }
  });
}

Var reshape(const Var& a, std::vector<int> shape) {
  if (numel(shape) != a.val().size())
    throw ShapeError("reshape: " + shape_str(a.val().shape()) + " -> " + shape_str(shape));
  Tensor out = a.val();
  Tensor reshaped(std::move(shape), std::vector<Scalar>(out.data(), out.data() + out.size()));
  return make_result(std::move(reshaped), {a}, [](Node& n) {
    Node& in = *n.inputs[0];
    in.ensure_grad();
    for (int64_t i = 0; i < n.grad.size(); ++i) in.grad[i] += n.grad[i];
  });
}

Var slice_cols(const Var& a, int c0, int c1) {
  check_2d(a.val(), "slice_cols");
  int rows = a.val().dim(0), cols = a.val().dim(1);
  if (c0 < 0 || c1 > cols || c0 >= c1)
    throw ShapeError("slice_cols: [" + std::to_string(c0) + "," + std::to_string(c1) +
                     ") of " + std::to_string(cols) + " columns");
  int w = c1 - c0;
  Tensor out({rows, w});
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < w; ++c) out.at(r, c) = a.val().at(r, c0 + c);
  return make_result(std::move(out), {a}, [c0, w, rows](Node& n) {
    Node& in = *n.inputs[0];
    in.ensure_grad();
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < w; ++c) in.grad.at(r, c0 + c) += n.grad.at(r, c);
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw InvalidInputError("concat_cols: no parts");
  int rows = parts[0].val().dim(0);
  int cols = 0;
  for (const Var& p : parts) {
    check_2d(p.val(), "concat_cols");
    if (p.val().dim(0) != rows) throw ShapeError("concat_cols: row mismatch");
    cols += p.val().dim(1);
  }
  Tensor out({rows, cols});
  std::vector<int> offsets;
  int off = 0;
  for (const Var& p : parts) {
    offsets.push_back(off);
    int w = p.val().dim(1);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < w; ++c) out.at(r, off + c) = p.val().at(r, c);
    off += w;
  }
  return make_result(std::move(out), parts, [offsets, rows](Node& n) {
    for (size_t k = 0; k < n.inputs.size(); ++k) {
      Node& in = *n.inputs[k];
      in.ensure_grad();
      int w = in.value.dim(1);
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < w; ++c) in.grad.at(r, c) += n.grad.at(r, offsets[k] + c);
    }
  });
}

Var slice_image(const Var& x, int n) {
  if (x.val().ndim() != 4) throw ShapeError("slice_image: expected (N,C,H,W)");
  int N = x.val().dim(0), C = x.val().dim(1), H = x.val().dim(2), W = x.val().dim(3);
  if (n < 0 || n >= N) throw ShapeError("slice_image: index " + std::to_string(n));
  int64_t plane = static_cast<int64_t>(C) * H * W;
  Tensor out({C, H * W});
  const Scalar* src = x.val().data() + n * plane;
  std::copy(src, src + plane, out.data());
  return make_result(std::move(out), {x}, [n, plane](Node& node) {
    Node& in = *node.inputs[0];
    in.ensure_grad();
    Scalar* dst = in.grad.data() + n * plane;
    for (int64_t i = 0; i < plane; ++i) dst[i] += node.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Convolutional ops
// ---------------------------------------------------------------------------

namespace {

struct ConvDims {
  int N, C, H, W, Cout, kh, kw, Ho, Wo;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int pad) {
  if (x.ndim() != 4 || w.ndim() != 4) throw ShapeError("conv2d: expected 4-D input and weight");
  ConvDims d{};
  d.N = x.dim(0);
  d.C = x.dim(1);
  d.H = x.dim(2);
  d.W = x.dim(3);
  d.Cout = w.dim(0);
  d.kh = w.dim(2);
  d.kw = w.dim(3);
  if (w.dim(1) != d.C)
    throw ShapeError("conv2d: weight channels " + std::to_string(w.dim(1)) + " vs input " +
                     std::to_string(d.C));
  d.Ho = (d.H + 2 * pad - d.kh) / stride + 1;
  d.Wo = (d.W + 2 * pad - d.kw) / stride + 1;
  if (d.Ho <= 0 || d.Wo <= 0) throw ShapeError("conv2d: output would be empty");
  return d;
}

// cols is (C*kh*kw) x (Ho*Wo) for one image.
void im2col(const Scalar* img, const ConvDims& d, int stride, int pad, Scalar* cols) {
  int patch = d.C * d.kh * d.kw;
  int area = d.Ho * d.Wo;
  for (int c = 0; c < d.C; ++c) {
    for (int ki = 0; ki < d.kh; ++ki) {
      for (int kj = 0; kj < d.kw; ++kj) {
        int row = (c * d.kh + ki) * d.kw + kj;
        Scalar* out_row = cols + static_cast<int64_t>(row) * area;
        for (int oi = 0; oi < d.Ho; ++oi) {
          int ii = oi * stride + ki - pad;
          for (int oj = 0; oj < d.Wo; ++oj) {
            int jj = oj * stride + kj - pad;
            Scalar v = 0;
            if (ii >= 0 && ii < d.H && jj >= 0 && jj < d.W)
              v = img[(static_cast<int64_t>(c) * d.H + ii) * d.W + jj];
            out_row[oi * d.Wo + oj] = v;
          }
        }
      }
    }
  }
  (void)patch;
}

void col2im_add(const Scalar* cols, const ConvDims& d, int stride, int pad, Scalar* img) {
  int area = d.Ho * d.Wo;
  for (int c = 0; c < d.C; ++c) {
    for (int ki = 0; ki < d.kh; ++ki) {
      for (int kj = 0; kj < d.kw; ++kj) {
        int row = (c * d.kh + ki) * d.kw + kj;
        const Scalar* in_row = cols + static_cast<int64_t>(row) * area;
        for (int oi = 0; oi < d.Ho; ++oi) {
          int ii = oi * stride + ki - pad;
          if (ii < 0 || ii >= d.H) continue;
          for (int oj = 0; oj < d.Wo; ++oj) {
            int jj = oj * stride + kj - pad;
            if (jj < 0 || jj >= d.W) continue;
            img[(static_cast<int64_t>(c) * d.H + ii) * d.W + jj] += in_row[oi * d.Wo + oj];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& bias, int stride, int pad) {
  ConvDims d = conv_dims(x.val(), w.val(), stride, pad);
  int patch = d.C * d.kh * d.kw;
  int area = d.Ho * d.Wo;
  Tensor out({d.N, d.Cout, d.Ho, d.Wo});
  std::vector<Scalar> cols(static_cast<size_t>(patch) * area);
  CMap wm(w.val().data(), d.Cout, patch);
  for (int n = 0; n < d.N; ++n) {
    im2col(x.val().data() + static_cast<int64_t>(n) * d.C * d.H * d.W, d, stride, pad, cols.data());
    CMap cm(cols.data(), patch, area);
    Map om(out.data() + static_cast<int64_t>(n) * d.Cout * area, d.Cout, area);
    om.noalias() = wm * cm;
    if (bias.defined())
      for (int co = 0; co < d.Cout; ++co) om.row(co).array() += bias.val()[co];
  }
  std::vector<Var> inputs = {x, w};
  if (bias.defined()) inputs.push_back(bias);
  bool has_bias = bias.defined();
  return make_result(std::move(out), std::move(inputs), [d, stride, pad, patch, area, has_bias](Node& n) {
    Node& ix = *n.inputs[0];
    Node& iw = *n.inputs[1];
    ix.ensure_grad();
    iw.ensure_grad();
    Node* ib = has_bias ? n.inputs[2].get() : nullptr;
    if (ib) ib->ensure_grad();
    std::vector<Scalar> cols(static_cast<size_t>(patch) * area);
    std::vector<Scalar> dcols(static_cast<size_t>(patch) * area);
    CMap wm(iw.value.data(), d.Cout, patch);
    Map dwm(iw.grad.data(), d.Cout, patch);
    for (int img = 0; img < d.N; ++img) {
      const Scalar* xptr = ix.value.data() + static_cast<int64_t>(img) * d.C * d.H * d.W;
      im2col(xptr, d, stride, pad, cols.data());
      CMap cm(cols.data(), patch, area);
      CMap go(n.grad.data() + static_cast<int64_t>(img) * d.Cout * area, d.Cout, area);
      dwm.noalias() += go * cm.transpose();
      Map dcm(dcols.data(), patch, area);
      dcm.noalias() = wm.transpose() * go;
      col2im_add(dcols.data(), d, stride, pad,
                 ix.grad.data() + static_cast<int64_t>(img) * d.C * d.H * d.W);
      if (ib)
        for (int co = 0; co < d.Cout; ++co) ib->grad[co] += go.row(co).sum();
    }
  });
}

Var batch_norm2d(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean,
                 Tensor& running_var, bool training, Scalar momentum, Scalar eps) {
  if (x.val().ndim() != 4) throw ShapeError("batch_norm2d: expected (N,C,H,W)");
  int N = x.val().dim(0), C = x.val().dim(1), H = x.val().dim(2), W = x.val().dim(3);
  if (gamma.val().size() != C || beta.val().size() != C || running_mean.size() != C ||
      running_var.size() != C)
    throw ShapeError("batch_norm2d: per-channel parameter length vs C=" + std::to_string(C));
  int64_t M = static_cast<int64_t>(N) * H * W;
  int64_t hw = static_cast<int64_t>(H) * W;

  Tensor mean({C}), inv_sigma({C});
  if (training) {
    Tensor var({C});
    for (int c = 0; c < C; ++c) {
      Scalar s = 0;
      for (int n = 0; n < N; ++n) {
        const Scalar* p = x.val().data() + (static_cast<int64_t>(n) * C + c) * hw;
        for (int64_t i = 0; i < hw; ++i) s += p[i];
      }
      mean[c] = s / M;
      Scalar v = 0;
      for (int n = 0; n < N; ++n) {
        const Scalar* p = x.val().data() + (static_cast<int64_t>(n) * C + c) * hw;
        for (int64_t i = 0; i < hw; ++i) {
          Scalar t = p[i] - mean[c];
          v += t * t;
        }
      }
      var[c] = v / M;
      inv_sigma[c] = 1.0 / std::sqrt(var[c] + eps);
      Scalar unbiased = M > 1 ? var[c] * M / (M - 1) : var[c];
      running_mean[c] = (1 - momentum) * running_mean[c] + momentum * mean[c];
      running_var[c] = (1 - momentum) * running_var[c] + momentum * unbiased;
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mean[c] = running_mean[c];
      inv_sigma[c] = 1.0 / std::sqrt(running_var[c] + eps);
    }
  }

  Tensor out(x.val().shape());
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const Scalar* p = x.val().data() + (static_cast<int64_t>(n) * C + c) * hw;
      Scalar* q = out.data() + (static_cast<int64_t>(n) * C + c) * hw;
      Scalar a = gamma.val()[c] * inv_sigma[c];
      Scalar b = beta.val()[c] - a * mean[c];
      for (int64_t i = 0; i < hw; ++i) q[i] = a * p[i] + b;
    }

  return make_result(std::move(out), {x, gamma, beta},
                     [mean, inv_sigma, training, N, C, hw, M](Node& n) {
    Node& ix = *n.inputs[0];
    Node& ig = *n.inputs[1];
    Node& ib = *n.inputs[2];
    ix.ensure_grad();
    ig.ensure_grad();
    ib.ensure_grad();
    for (int c = 0; c < C; ++c) {
      Scalar sum_dy = 0, sum_dy_xhat = 0;
      for (int img = 0; img < N; ++img) {
        const Scalar* xp = ix.value.data() + (static_cast<int64_t>(img) * C + c) * hw;
        const Scalar* gp = n.grad.data() + (static_cast<int64_t>(img) * C + c) * hw;
        for (int64_t i = 0; i < hw; ++i) {
          Scalar xhat = (xp[i] - mean[c]) * inv_sigma[c];
          sum_dy += gp[i];
          sum_dy_xhat += gp[i] * xhat;
        }
      }
      ig.grad[c] += sum_dy_xhat;
      ib.grad[c] += sum_dy;
      Scalar k = ig.value[c] * inv_sigma[c];
      for (int img = 0; img < N; ++img) {
        const Scalar* xp = ix.value.data() + (static_cast<int64_t>(img) * C + c) * hw;
        const Scalar* gp = n.grad.data() + (static_cast<int64_t>(img) * C + c) * hw;
        Scalar* dp = ix.grad.data() + (static_cast<int64_t>(img) * C + c) * hw;
        if (training) {
          for (int64_t i = 0; i < hw; ++i) {
            Scalar xhat = (xp[i] - mean[c]) * inv_sigma[c];
            dp[i] += k * (gp[i] - sum_dy / M - xhat * sum_dy_xhat / M);
          }
        } else {
          for (int64_t i = 0; i < hw; ++i) dp[i] += k * gp[i];
        }
      }
    }
  });
}

Var max_pool2d(const Var& x, int kernel, int stride, int pad) {
  if (x.val().ndim() != 4) throw ShapeError("max_pool2d: expected (N,C,H,W)");
  int N = x.val().dim(0), C = x.val().dim(1), H = x.val().dim(2), W = x.val().dim(3);
  int Ho = (H + 2 * pad - kernel) / stride + 1;
  int Wo = (W + 2 * pad - kernel) / stride + 1;
  if (Ho <= 0 || Wo <= 0) throw ShapeError("max_pool2d: output would be empty");
  Tensor out({N, C, Ho, Wo});
  std::vector<int64_t> argmax(static_cast<size_t>(out.size()));
  int64_t oidx = 0;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const Scalar* plane = x.val().data() + (static_cast<int64_t>(n) * C + c) * H * W;
      int64_t base = (static_cast<int64_t>(n) * C + c) * H * W;
      for (int oi = 0; oi < Ho; ++oi)
        for (int oj = 0; oj < Wo; ++oj) {
          Scalar best = -std::numeric_limits<Scalar>::infinity();
          int64_t best_idx = -1;
          for (int ki = 0; ki < kernel; ++ki) {
            int ii = oi * stride + ki - pad;
            if (ii < 0 || ii >= H) continue;
            for (int kj = 0; kj < kernel; ++kj) {
              int jj = oj * stride + kj - pad;
              if (jj < 0 || jj >= W) continue;
              Scalar v = plane[static_cast<int64_t>(ii) * W + jj];
              if (v > best) {
                best = v;
                best_idx = base + static_cast<int64_t>(ii) * W + jj;
              }
            }
          }
          out[oidx] = best;
          argmax[static_cast<size_t>(oidx)] = best_idx;
          ++oidx;
        }
    }
  return make_result(std::move(out), {x}, [argmax](Node& n) {
    Node& in = *n.inputs[0];
    in.ensure_grad();
    for (int64_t i = 0; i < n.grad.size(); ++i)
      if (argmax[static_cast<size_t>(i)] >= 0) in.grad[argmax[static_cast<size_t>(i)]] += n.grad[i];
  });
}

}  // namespace gtrans
