#pragma once

#include <Eigen/Dense>
#include <functional>
#include <limits>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tsbn/errors.hpp"
#include "tsbn/tensor.hpp"

namespace tsbn {

// A named, persistently stored parameter tensor. Models own Params; a
// Graph binds them to leaf nodes for one forward/backward pass.
struct Param {
  std::string name;
  Tensor value;
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Nodes are appended in forward order, which is a
// topological order, so backward() is a single reverse sweep. One Graph
// instance per training step; parameters re-bind each step.
class Graph {
 public:
  using RowMat =
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MapMat = Eigen::Map<RowMat>;
  using ConstMapMat = Eigen::Map<const RowMat>;

  // Probability clamp applied before the BCE logs.
  static constexpr double kBceEps = 1e-7;

  Var input(Tensor v) { return push(std::move(v), false, nullptr); }

  // Binding is idempotent: the same Param yields the same node, so grads
  // accumulate correctly when a parameter is used more than once.
  Var param(Param& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return Var{it->second};
    Var v = push(p.value, true, &p);
    param_nodes_[&p] = v.id;
    return v;
  }

  const Tensor& value(Var v) const { return nodes_[idx(v)].value; }

  const Tensor& grad(Var v) const {
    const Node& n = nodes_[idx(v)];
    if (n.grad.data.empty())
      throw InvalidInput("gradient not computed for node");
    return n.grad;
  }

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape once.
  void backward(Var loss) {
    Node& ln = nodes_[idx(loss)];
    if (ln.value.numel() != 1)
      throw InvalidInput("backward requires a scalar loss");
    grad_buf(loss.id)[0] = 1.0;
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.backward_fn && n.requires_grad && !n.grad.data.empty())
        n.backward_fn(*this);
    }
  }

  // (param, grad) pairs for every parameter bound into this graph that
  // received a gradient.
  std::vector<std::pair<Param*, const Tensor*>> param_grads() const {
    std::vector<std::pair<Param*, const Tensor*>> out;
    for (const Node& n : nodes_) {
      if (n.origin && !n.grad.data.empty()) out.push_back({n.origin, &n.grad});
    }
    return out;
  }

  // ---- ops ----

  Var relu(Var x) {
    Tensor out = value(x);
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    Var y = push(std::move(out), needs_grad(x), nullptr);
    if (needs_grad(x)) {
      int xi = x.id, yi = y.id;
      node(y).backward_fn = [xi, yi](Graph& g) {
        const Tensor& xv = g.nodes_[xi].value;
        const Tensor& gy = g.nodes_[yi].grad;
        double* gx = g.grad_buf(xi);
        for (long i = 0; i < xv.numel(); ++i)
          if (xv[i] > 0.0) gx[i] += gy[i];
      };
    }
    return y;
  }

  Var sigmoid(Var x) {
    Tensor out = value(x);
    for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
    Var y = push(std::move(out), needs_grad(x), nullptr);
    if (needs_grad(x)) {
      int xi = x.id, yi = y.id;
      node(y).backward_fn = [xi, yi](Graph& g) {
        const Tensor& yv = g.nodes_[yi].value;
        const Tensor& gy = g.nodes_[yi].grad;
        double* gx = g.grad_buf(xi);
        for (long i = 0; i < yv.numel(); ++i)
          gx[i] += gy[i] * yv[i] * (1.0 - yv[i]);
      };
    }
    return y;
  }

  Var add(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (!av.same_shape(bv))
      throw InvalidInput("add: shape mismatch " + av.shape_str() + " vs " +
                         bv.shape_str());
    Tensor out = av;
    for (long i = 0; i < out.numel(); ++i) out[i] += bv[i];
    bool rg = needs_grad(a) || needs_grad(b);
    Var y = push(std::move(out), rg, nullptr);
    if (rg) {
      int ai = a.id, bi = b.id, yi = y.id;
      bool ra = needs_grad(a), rb = needs_grad(b);
      node(y).backward_fn = [ai, bi, yi, ra, rb](Graph& g) {
        const Tensor& gy = g.nodes_[yi].grad;
        if (ra) {
          double* ga = g.grad_buf(ai);
          for (long i = 0; i < gy.numel(); ++i) ga[i] += gy[i];
        }
        if (rb) {
          double* gb = g.grad_buf(bi);
          for (long i = 0; i < gy.numel(); ++i) gb[i] += gy[i];
        }
      };
    }
    return y;
  }

  // Cuts the tape: value flows, gradient does not.
  Var detach(Var x) { return push(value(x), false, nullptr); }

  // 2-d convolution over (N, C, H, W), weight (K, C, kh, kw), bias (K).
  // im2col + GEMM; the 1x1/stride-1 case maps the input directly.
  Var conv2d(Var x, Var w, Var b, int stride = 1, int pad = 1) {
    const Tensor& xv = value(x);
    const Tensor& wv = value(w);
    const Tensor& bv = value(b);
    if (xv.rank() != 4 || wv.rank() != 4)
      throw InvalidInput("conv2d expects 4-d input and weight");
    const long N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const long K = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
    if (wv.dim(1) != C)
      throw InvalidInput("conv2d: weight channels " +
                         std::to_string(wv.dim(1)) + " != input channels " +
                         std::to_string(C));
    if (bv.numel() != K) throw InvalidInput("conv2d: bias size mismatch");
    const long Ho = (H + 2 * pad - kh) / stride + 1;
    const long Wo = (W + 2 * pad - kw) / stride + 1;
    if (Ho < 1 || Wo < 1) throw InvalidInput("conv2d: output would be empty");
    const long R = C * kh * kw;
    const long P = Ho * Wo;

    Tensor out({N, K, Ho, Wo});
    const bool direct = (kh == 1 && kw == 1 && stride == 1 && pad == 0);
    std::vector<double> col;
    if (!direct) col.resize(static_cast<std::size_t>(R * P));
    ConstMapMat wm(wv.ptr(), K, R);
    for (long n = 0; n < N; ++n) {
      const double* xn = xv.ptr() + n * C * H * W;
      double* on = out.ptr() + n * K * P;
      if (direct) {
        ConstMapMat cm(xn, R, P);
        MapMat(on, K, P).noalias() = wm * cm;
      } else {
        im2col(xn, C, H, W, kh, kw, stride, pad, Ho, Wo, col.data());
        ConstMapMat cm(col.data(), R, P);
        MapMat(on, K, P).noalias() = wm * cm;
      }
      for (long k = 0; k < K; ++k) {
        double bk = bv[k];
        double* row = on + k * P;
        for (long p = 0; p < P; ++p) row[p] += bk;
      }
    }

    bool rg = needs_grad(x) || needs_grad(w) || needs_grad(b);
    Var y = push(std::move(out), rg, nullptr);
    if (rg) {
      int xi = x.id, wi = w.id, bi = b.id, yi = y.id;
      bool rx = needs_grad(x);
      node(y).backward_fn = [xi, wi, bi, yi, rx, stride, pad](Graph& g) {
        g.conv2d_backward(xi, wi, bi, yi, rx, stride, pad);
      };
    }
    return y;
  }

  // Fully connected: x (N, I), w (O, I), b (O) -> (N, O).
  Var linear(Var x, Var w, Var b) {
    const Tensor& xv = value(x);
    const Tensor& wv = value(w);
    const Tensor& bv = value(b);
    if (xv.rank() != 2 || wv.rank() != 2)
      throw InvalidInput("linear expects 2-d input and weight");
    const long N = xv.dim(0), I = xv.dim(1), O = wv.dim(0);
    if (wv.dim(1) != I)
      throw InvalidInput("linear: weight in-dim " + std::to_string(wv.dim(1)) +
                         " != input dim " + std::to_string(I));
    if (bv.numel() != O) throw InvalidInput("linear: bias size mismatch");
    Tensor out({N, O});
    ConstMapMat xm(xv.ptr(), N, I), wm(wv.ptr(), O, I);
    MapMat om(out.ptr(), N, O);
    om.noalias() = xm * wm.transpose();
    for (long n = 0; n < N; ++n)
      for (long o = 0; o < O; ++o) out[n * O + o] += bv[o];

    bool rg = needs_grad(x) || needs_grad(w) || needs_grad(b);
    Var y = push(std::move(out), rg, nullptr);
    if (rg) {
      int xi = x.id, wi = w.id, bi = b.id, yi = y.id;
      bool rx = needs_grad(x);
      node(y).backward_fn = [xi, wi, bi, yi, rx](Graph& g) {
        const Tensor& xv2 = g.nodes_[xi].value;
        const Tensor& wv2 = g.nodes_[wi].value;
        const Tensor& gy = g.nodes_[yi].grad;
        const long N2 = xv2.dim(0), I2 = xv2.dim(1), O2 = wv2.dim(0);
        ConstMapMat gym(gy.ptr(), N2, O2);
        ConstMapMat xm2(xv2.ptr(), N2, I2), wm2(wv2.ptr(), O2, I2);
        if (rx) {
          MapMat gxm(g.grad_buf(xi), N2, I2);
          gxm.noalias() += gym * wm2;
        }
        MapMat gwm(g.grad_buf(wi), O2, I2);
        gwm.noalias() += gym.transpose() * xm2;
        double* gb = g.grad_buf(bi);
        for (long n = 0; n < N2; ++n)
          for (long o = 0; o < O2; ++o) gb[o] += gy[n * O2 + o];
      };
    }
    return y;
  }

  // 2x2 max pooling, stride 2. H and W must be even.
  Var maxpool2(Var x) {
    const Tensor& xv = value(x);
    if (xv.rank() != 4) throw InvalidInput("maxpool2 expects 4-d input");
    const long N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    if (H % 2 != 0 || W % 2 != 0)
      throw InvalidInput("maxpool2 requires even spatial dims");
    const long Ho = H / 2, Wo = W / 2;
    Tensor out({N, C, Ho, Wo});
    std::vector<long> argmax(static_cast<std::size_t>(out.numel()));
    long oi = 0;
    for (long nc = 0; nc < N * C; ++nc) {
      const double* plane = xv.ptr() + nc * H * W;
      for (long ho = 0; ho < Ho; ++ho) {
        for (long wo = 0; wo < Wo; ++wo, ++oi) {
          long base = (2 * ho) * W + 2 * wo;
          long best = base;
          double bv = plane[base];
          for (long dy = 0; dy < 2; ++dy)
            for (long dx = 0; dx < 2; ++dx) {
              long idx2 = base + dy * W + dx;
              if (plane[idx2] > bv) {
                bv = plane[idx2];
                best = idx2;
              }
            }
          out[oi] = bv;
          argmax[static_cast<std::size_t>(oi)] = nc * H * W + best;
        }
      }
    }
    Var y = push(std::move(out), needs_grad(x), nullptr);
    if (needs_grad(x)) {
      int xi = x.id, yi = y.id;
      node(y).backward_fn = [xi, yi, am = std::move(argmax)](Graph& g) {
        const Tensor& gy = g.nodes_[yi].grad;
        double* gx = g.grad_buf(xi);
        for (long i = 0; i < gy.numel(); ++i)
          gx[am[static_cast<std::size_t>(i)]] += gy[i];
      };
    }
    return y;
  }

  // Nearest-neighbour x2 upsampling.
  Var upsample2(Var x) {
    const Tensor& xv = value(x);
    if (xv.rank() != 4) throw InvalidInput("upsample2 expects 4-d input");
    const long N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    Tensor out({N, C, 2 * H, 2 * W});
    for (long nc = 0; nc < N * C; ++nc) {
      const double* src = xv.ptr() + nc * H * W;
      double* dst = out.ptr() + nc * 4 * H * W;
      for (long h = 0; h < H; ++h)
        for (long w2 = 0; w2 < W; ++w2) {
          double v = src[h * W + w2];
          long o = (2 * h) * (2 * W) + 2 * w2;
          dst[o] = v;
          dst[o + 1] = v;
          dst[o + 2 * W] = v;
          dst[o + 2 * W + 1] = v;
        }
    }
    Var y = push(std::move(out), needs_grad(x), nullptr);
    if (needs_grad(x)) {
      int xi = x.id, yi = y.id;
      node(y).backward_fn = [xi, yi](Graph& g) {
        const Tensor& xv2 = g.nodes_[xi].value;
        const Tensor& gy = g.nodes_[yi].grad;
        const long N2 = xv2.dim(0), C2 = xv2.dim(1), H2 = xv2.dim(2),
                   W2 = xv2.dim(3);
        double* gx = g.grad_buf(xi);
        for (long nc = 0; nc < N2 * C2; ++nc) {
          const double* gsrc = gy.ptr() + nc * 4 * H2 * W2;
          double* gdst = gx + nc * H2 * W2;
          for (long h = 0; h < H2; ++h)
            for (long w2 = 0; w2 < W2; ++w2) {
              long o = (2 * h) * (2 * W2) + 2 * w2;
              gdst[h * W2 + w2] +=
                  gsrc[o] + gsrc[o + 1] + gsrc[o + 2 * W2] + gsrc[o + 2 * W2 + 1];
            }
        }
      };
    }
    return y;
  }

  // Channel concatenation of same-spatial-shape maps.
  Var concat_ch(const std::vector<Var>& parts) {
    if (parts.empty()) throw InvalidInput("concat_ch: no inputs");
    const Tensor& first = value(parts[0]);
    if (first.rank() != 4) throw InvalidInput("concat_ch expects 4-d inputs");
    const long N = first.dim(0), H = first.dim(2), W = first.dim(3);
    long Ctot = 0;
    std::vector<long> channels;
    for (Var p : parts) {
      const Tensor& t = value(p);
      if (t.dim(0) != N || t.dim(2) != H || t.dim(3) != W)
        throw InvalidInput("concat_ch: incompatible shapes");
      channels.push_back(t.dim(1));
      Ctot += t.dim(1);
    }
    Tensor out({N, Ctot, H, W});
    const long hw = H * W;
    for (long n = 0; n < N; ++n) {
      long coff = 0;
      for (std::size_t pi = 0; pi < parts.size(); ++pi) {
        const Tensor& t = value(parts[pi]);
        long Cp = channels[pi];
        std::copy(t.ptr() + n * Cp * hw, t.ptr() + (n + 1) * Cp * hw,
                  out.ptr() + (n * Ctot + coff) * hw);
        coff += Cp;
      }
    }
    bool rg = false;
    for (Var p : parts) rg = rg || needs_grad(p);
    Var y = push(std::move(out), rg, nullptr);
    if (rg) {
      std::vector<int> ids;
      std::vector<bool> reqs;
      for (Var p : parts) {
        ids.push_back(p.id);
        reqs.push_back(needs_grad(p));
      }
      int yi = y.id;
      node(y).backward_fn = [ids, reqs, channels, yi](Graph& g) {
        const Tensor& gy = g.nodes_[yi].grad;
        const long N2 = gy.dim(0), Ctot2 = gy.dim(1), hw2 = gy.dim(2) * gy.dim(3);
        long coff = 0;
        for (std::size_t pi = 0; pi < ids.size(); ++pi) {
          long Cp = channels[pi];
          if (reqs[pi]) {
            double* gx = g.grad_buf(ids[pi]);
            for (long n = 0; n < N2; ++n) {
              const double* src = gy.ptr() + (n * Ctot2 + coff) * hw2;
              double* dst = gx + n * Cp * hw2;
              for (long i = 0; i < Cp * hw2; ++i) dst[i] += src[i];
            }
          }
          coff += Cp;
        }
      };
    }
    return y;
  }

  // Global average pooling: (N, C, H, W) -> (N, C).
  Var global_avg_pool(Var x) {
    const Tensor& xv = value(x);
    if (xv.rank() != 4) throw InvalidInput("global_avg_pool expects 4-d input");
    const long N = xv.dim(0), C = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
    Tensor out({N, C});
    for (long nc = 0; nc < N * C; ++nc) {
      const double* p = xv.ptr() + nc * hw;
      double s = 0.0;
      for (long i = 0; i < hw; ++i) s += p[i];
      out[nc] = s / static_cast<double>(hw);
    }
    Var y = push(std::move(out), needs_grad(x), nullptr);
    if (needs_grad(x)) {
      int xi = x.id, yi = y.id;
      node(y).backward_fn = [xi, yi](Graph& g) {
        const Tensor& xv2 = g.nodes_[xi].value;
        const Tensor& gy = g.nodes_[yi].grad;
        const long hw2 = xv2.dim(2) * xv2.dim(3);
        const double inv = 1.0 / static_cast<double>(hw2);
        double* gx = g.grad_buf(xi);
        for (long nc = 0; nc < gy.numel(); ++nc) {
          double gv = gy[nc] * inv;
          double* dst = gx + nc * hw2;
          for (long i = 0; i < hw2; ++i) dst[i] += gv;
        }
      };
    }
    return y;
  }

  // Mean over every element of (a - b)^2. Shared kernel for the
  // restoration and transfer losses.
  Var mean_sq_diff(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (!av.same_shape(bv))
      throw InvalidInput("mean_sq_diff: shape mismatch " + av.shape_str() +
                         " vs " + bv.shape_str());
    const long n = av.numel();
    double acc = 0.0;
    for (long i = 0; i < n; ++i) {
      double d = av[i] - bv[i];
      acc += d * d;
    }
    Tensor out = Tensor::scalar(acc / static_cast<double>(n));
    bool rg = needs_grad(a) || needs_grad(b);
    Var y = push(std::move(out), rg, nullptr);
    if (rg) {
      int ai = a.id, bi = b.id, yi = y.id;
      bool ra = needs_grad(a), rb = needs_grad(b);
      node(y).backward_fn = [ai, bi, yi, ra, rb](Graph& g) {
        const Tensor& av2 = g.nodes_[ai].value;
        const Tensor& bv2 = g.nodes_[bi].value;
        const double gy = g.nodes_[yi].grad[0];
        const long n2 = av2.numel();
        const double scale = 2.0 * gy / static_cast<double>(n2);
        double* ga = ra ? g.grad_buf(ai) : nullptr;
        double* gb = rb ? g.grad_buf(bi) : nullptr;
        for (long i = 0; i < n2; ++i) {
          double d = scale * (av2[i] - bv2[i]);
          if (ga) ga[i] += d;
          if (gb) gb[i] -= d;
        }
      };
    }
    return y;
  }

  // Class-weighted binary cross entropy, mean over the batch. probs must
  // hold one probability per sample; they are clamped to
  // [1e-7, 1 - 1e-7] before the logs.
  Var weighted_bce(Var probs, const std::vector<int>& labels, double w) {
    const Tensor& pv = value(probs);
    const long n = pv.numel();
    if (n != static_cast<long>(labels.size()))
      throw InvalidInput("weighted_bce: probs/labels length mismatch");
    if (w <= 0.0) throw InvalidInput("weighted_bce: weight must be positive");
    for (int y : labels)
      if (y != 0 && y != 1)
        throw InvalidInput("weighted_bce: label outside {0,1}");
    double acc = 0.0;
    for (long i = 0; i < n; ++i) {
      double p = std::min(1.0 - kBceEps, std::max(kBceEps, pv[i]));
      acc -= labels[static_cast<std::size_t>(i)] == 1
                 ? w * std::log(p)
                 : std::log(1.0 - p);
    }
    Tensor out = Tensor::scalar(acc / static_cast<double>(n));
    bool rg = needs_grad(probs);
    Var y = push(std::move(out), rg, nullptr);
    if (rg) {
      int pi = probs.id, yi = y.id;
      node(y).backward_fn = [pi, yi, labels, w](Graph& g) {
        const Tensor& pv2 = g.nodes_[pi].value;
        const double gy = g.nodes_[yi].grad[0];
        const long n2 = pv2.numel();
        const double inv = gy / static_cast<double>(n2);
        double* gp = g.grad_buf(pi);
        for (long i = 0; i < n2; ++i) {
          double p = pv2[i];
          if (p <= kBceEps || p >= 1.0 - kBceEps) continue;  // clamped: flat
          gp[i] += labels[static_cast<std::size_t>(i)] == 1
                       ? -inv * w / p
                       : inv / (1.0 - p);
        }
      };
    }
    return y;
  }

  // alpha * a + b on scalars; the downstream-task total loss.
  Var scaled_sum(double alpha, Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (av.numel() != 1 || bv.numel() != 1)
      throw InvalidInput("scaled_sum expects scalars");
    Tensor out = Tensor::scalar(alpha * av[0] + bv[0]);
    bool rg = needs_grad(a) || needs_grad(b);
    Var y = push(std::move(out), rg, nullptr);
    if (rg) {
      int ai = a.id, bi = b.id, yi = y.id;
      bool ra = needs_grad(a), rb = needs_grad(b);
      node(y).backward_fn = [ai, bi, yi, ra, rb, alpha](Graph& g) {
        const double gy = g.nodes_[yi].grad[0];
        if (ra) g.grad_buf(ai)[0] += alpha * gy;
        if (rb) g.grad_buf(bi)[0] += gy;
      };
    }
    return y;
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Param* origin = nullptr;
    std::function<void(Graph&)> backward_fn;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const Param*, int> param_nodes_;

  static std::size_t idx(Var v) {
    if (!v.valid()) throw InvalidInput("use of empty Var");
    return static_cast<std::size_t>(v.id);
  }

  Node& node(Var v) { return nodes_[idx(v)]; }

  bool needs_grad(Var v) const { return nodes_[idx(v)].requires_grad; }

  Var push(Tensor value, bool requires_grad, Param* origin) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.origin = origin;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  double* grad_buf(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.data.empty()) {
      n.grad.shape = n.value.shape;
      n.grad.data.assign(n.value.data.size(), 0.0);
    }
    return n.grad.ptr();
  }

  static void im2col(const double* x, long C, long H, long W, long kh, long kw,
                     int stride, int pad, long Ho, long Wo, double* col) {
    const long P = Ho * Wo;
    long r = 0;
    for (long c = 0; c < C; ++c) {
      const double* plane = x + c * H * W;
      for (long i = 0; i < kh; ++i) {
        for (long j = 0; j < kw; ++j, ++r) {
          double* row = col + r * P;
          for (long ho = 0; ho < Ho; ++ho) {
            long hi = ho * stride - pad + i;
            double* dst = row + ho * Wo;
            if (hi < 0 || hi >= H) {
              std::fill(dst, dst + Wo, 0.0);
              continue;
            }
            const double* src = plane + hi * W;
            for (long wo = 0; wo < Wo; ++wo) {
              long wi = wo * stride - pad + j;
              dst[wo] = (wi >= 0 && wi < W) ? src[wi] : 0.0;
            }
          }
        }
      }
    }
  }

  static void col2im_add(const double* col, long C, long H, long W, long kh,
                         long kw, int stride, int pad, long Ho, long Wo,
                         double* gx) {
    const long P = Ho * Wo;
    long r = 0;
    for (long c = 0; c < C; ++c) {
      double* plane = gx + c * H * W;
      for (long i = 0; i < kh; ++i) {
        for (long j = 0; j < kw; ++j, ++r) {
          const double* row = col + r * P;
          for (long ho = 0; ho < Ho; ++ho) {
            long hi = ho * stride - pad + i;
            if (hi < 0 || hi >= H) continue;
            double* dst = plane + hi * W;
            const double* src = row + ho * Wo;
            for (long wo = 0; wo < Wo; ++wo) {
              long wi = wo * stride - pad + j;
              if (wi >= 0 && wi < W) dst[wi] += src[wo];
            }
          }
        }
      }
    }
  }

  void conv2d_backward(int xi, int wi, int bi, int yi, bool rx, int stride,
                       int pad) {
    const Tensor& xv = nodes_[static_cast<std::size_t>(xi)].value;
    const Tensor& wv = nodes_[static_cast<std::size_t>(wi)].value;
    const Tensor& gy = nodes_[static_cast<std::size_t>(yi)].grad;
    const long N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const long K = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
    const long Ho = gy.dim(2), Wo = gy.dim(3);
    const long R = C * kh * kw;
    const long P = Ho * Wo;
    const bool direct = (kh == 1 && kw == 1 && stride == 1 && pad == 0);

    double* gw = grad_buf(wi);
    double* gb = grad_buf(bi);
    double* gx = rx ? grad_buf(xi) : nullptr;
    MapMat gwm(gw, K, R);
    ConstMapMat wm(wv.ptr(), K, R);
    std::vector<double> col, gcol;
    if (!direct) col.resize(static_cast<std::size_t>(R * P));
    if (rx && !direct) gcol.resize(static_cast<std::size_t>(R * P));

    for (long n = 0; n < N; ++n) {
      const double* xn = xv.ptr() + n * C * H * W;
      const double* gyn = gy.ptr() + n * K * P;
      ConstMapMat gym(gyn, K, P);
      if (direct) {
        ConstMapMat cm(xn, R, P);
        gwm.noalias() += gym * cm.transpose();
        if (gx) {
          MapMat gxm(gx + n * C * H * W, R, P);
          gxm.noalias() += wm.transpose() * gym;
        }
      } else {
        im2col(xn, C, H, W, kh, kw, stride, pad, Ho, Wo, col.data());
        ConstMapMat cm(col.data(), R, P);
        gwm.noalias() += gym * cm.transpose();
        if (gx) {
          MapMat gcm(gcol.data(), R, P);
          gcm.noalias() = wm.transpose() * gym;
          col2im_add(gcol.data(), C, H, W, kh, kw, stride, pad, Ho, Wo,
                     gx + n * C * H * W);
        }
      }
      for (long k = 0; k < K; ++k) {
        const double* row = gyn + k * P;
        double s = 0.0;
        for (long p = 0; p < P; ++p) s += row[p];
        gb[k] += s;
      }
    }
  }
};

}  // namespace tsbn
