#include "tvla/ops.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "tvla/errors.hpp"

namespace tvla::ops {

namespace {

using Eigen::OuterStride;
using StridedMap = Eigen::Map<RowMatrix, 0, OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMatrix, 0, OuterStride<>>;

Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }
bool wants(Node& self, std::size_t i) { return self.parents[i]->requires_grad; }

void require(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

std::string dims(const Var& v) { return shape_str(v.shape()); }

Shape mat_shape(std::size_t r, std::size_t c) { return Shape{r, c}; }

}  // namespace

Var constant(Tensor value) { return Var(std::move(value), false); }

Var matmul(const Var& a, const Var& b) {
  require(a.cols() == b.rows(), "matmul inner dimension mismatch: " + dims(a) + " x " + dims(b));
  Tensor out(mat_shape(a.rows(), b.cols()));
  out.mat().noalias() = a.value().mat() * b.value().mat();
  return make_node(std::move(out), {a, b}, "matmul", [](Node& self) {
    auto g = self.grad.mat();
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) pa.grad_buffer().mat().noalias() += g * pb.value.mat().transpose();
    if (pb.requires_grad) pb.grad_buffer().mat().noalias() += pa.value.mat().transpose() * g;
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  require(x.cols() == w.cols(), "linear input width mismatch: " + dims(x) + " vs weight " + dims(w));
  const bool has_bias = static_cast<bool>(b);
  if (has_bias) require(b.value().size() == w.rows(), "linear bias length mismatch: " + dims(b));
  Tensor out(mat_shape(x.rows(), w.rows()));
  out.mat().noalias() = x.value().mat() * w.value().mat().transpose();
  if (has_bias) out.mat().rowwise() += b.value().mat().row(0);
  std::vector<Var> parents{x, w};
  if (has_bias) parents.push_back(b);
  return make_node(std::move(out), std::move(parents), "linear", [has_bias](Node& self) {
    auto g = self.grad.mat();
    Node& px = parent(self, 0);
    Node& pw = parent(self, 1);
    if (px.requires_grad) px.grad_buffer().mat().noalias() += g * pw.value.mat();
    if (pw.requires_grad) pw.grad_buffer().mat().noalias() += g.transpose() * px.value.mat();
    if (has_bias && wants(self, 2)) parent(self, 2).grad_buffer().mat().row(0) += g.colwise().sum();
  });
}

Var add(const Var& a, const Var& b) {
  require(a.shape() == b.shape(), "add shape mismatch: " + dims(a) + " vs " + dims(b));
  Tensor out = a.value();
  out.mat() += b.value().mat();
  return make_node(std::move(out), {a, b}, "add", [](Node& self) {
    for (std::size_t i = 0; i < 2; ++i) {
      if (wants(self, i)) parent(self, i).grad_buffer().mat() += self.grad.mat();
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require(a.shape() == b.shape(), "sub shape mismatch: " + dims(a) + " vs " + dims(b));
  Tensor out = a.value();
  out.mat() -= b.value().mat();
  return make_node(std::move(out), {a, b}, "sub", [](Node& self) {
    if (wants(self, 0)) parent(self, 0).grad_buffer().mat() += self.grad.mat();
    if (wants(self, 1)) parent(self, 1).grad_buffer().mat() -= self.grad.mat();
  });
}

Var mul(const Var& a, const Var& b) {
  require(a.shape() == b.shape(), "mul shape mismatch: " + dims(a) + " vs " + dims(b));
  Tensor out = a.value();
  out.mat().array() *= b.value().mat().array();
  return make_node(std::move(out), {a, b}, "mul", [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) pa.grad_buffer().mat().array() += self.grad.mat().array() * pb.value.mat().array();
    if (pb.requires_grad) pb.grad_buffer().mat().array() += self.grad.mat().array() * pa.value.mat().array();
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  out.mat() *= s;
  return make_node(std::move(out), {a}, "scale", [s](Node& self) {
    parent(self, 0).grad_buffer().mat() += s * self.grad.mat();
  });
}

Var add_bias(const Var& x, const Var& bias) {
  require(bias.value().size() == x.cols(), "add_bias width mismatch: " + dims(x) + " vs " + dims(bias));
  Tensor out = x.value();
  out.mat().rowwise() += ConstMatMap(bias.value().data(), 1, x.cols()).row(0);
  return make_node(std::move(out), {x, bias}, "add_bias", [](Node& self) {
    if (wants(self, 0)) parent(self, 0).grad_buffer().mat() += self.grad.mat();
    if (wants(self, 1)) {
      Tensor& g = parent(self, 1).grad_buffer();
      MatMap(g.data(), 1, g.size()).row(0) += self.grad.mat().colwise().sum();
    }
  });
}

Var add_tiled(const Var& x, const Var& p) {
  const std::size_t t = p.rows();
  require(p.cols() == x.cols() && t > 0 && x.rows() % t == 0,
          "add_tiled shape mismatch: " + dims(x) + " vs " + dims(p));
  Tensor out = x.value();
  const std::size_t blocks = x.rows() / t;
  for (std::size_t b = 0; b < blocks; ++b) out.mat().middleRows(b * t, t) += p.value().mat();
  return make_node(std::move(out), {x, p}, "add_tiled", [t, blocks](Node& self) {
    if (wants(self, 0)) parent(self, 0).grad_buffer().mat() += self.grad.mat();
    if (wants(self, 1)) {
      auto gp = parent(self, 1).grad_buffer().mat();
      for (std::size_t b = 0; b < blocks; ++b) gp += self.grad.mat().middleRows(b * t, t);
    }
  });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Var gelu(const Var& x) {
  Tensor out(x.shape());
  const auto& in = x.value();
  // tanh is the expensive part; keep it for the backward pass.
  auto th = std::make_shared<std::vector<double>>(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    const double v = in[i];
    (*th)[i] = std::tanh(kGeluC * (v + kGeluA * v * v * v));
    out[i] = 0.5 * v * (1.0 + (*th)[i]);
  }
  return make_node(std::move(out), {x}, "gelu", [th](Node& self) {
    Node& px = parent(self, 0);
    Tensor& g = px.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = px.value[i];
      const double t = (*th)[i];
      const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
      g[i] += self.grad[i] * d;
    }
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  if (!(eps > 0.0)) throw PreconditionError("layer_norm eps must be positive");
  const std::size_t n = x.rows();
  const std::size_t c = x.cols();
  require(gain.value().size() == c && bias.value().size() == c,
          "layer_norm affine width mismatch: " + dims(x) + " vs " + dims(gain));
  auto xhat = std::make_shared<Tensor>(mat_shape(n, c));
  auto rstd = std::make_shared<std::vector<double>>(n);
  Tensor out(x.shape());
  const double* g = gain.value().data();
  const double* b = bias.value().data();
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = x.value().data() + r * c;
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += row[j];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(c);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    double* xh = xhat->data() + r * c;
    double* o = out.data() + r * c;
    for (std::size_t j = 0; j < c; ++j) {
      xh[j] = (row[j] - mean) * rs;
      o[j] = xh[j] * g[j] + b[j];
    }
  }
  return make_node(std::move(out), {x, gain, bias}, "layer_norm", [xhat, rstd, n, c](Node& self) {
    const double* dy = self.grad.data();
    const double* gv = parent(self, 1).value.data();
    if (wants(self, 1)) {
      double* dg = parent(self, 1).grad_buffer().data();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < c; ++j) dg[j] += dy[r * c + j] * (*xhat)[r * c + j];
    }
    if (wants(self, 2)) {
      double* db = parent(self, 2).grad_buffer().data();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < c; ++j) db[j] += dy[r * c + j];
    }
    if (wants(self, 0)) {
      double* dx = parent(self, 0).grad_buffer().data();
      std::vector<double> dxh(c);
      for (std::size_t r = 0; r < n; ++r) {
        const double* xh = xhat->data() + r * c;
        double m1 = 0.0;
        double m2 = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
          dxh[j] = dy[r * c + j] * gv[j];
          m1 += dxh[j];
          m2 += dxh[j] * xh[j];
        }
        m1 /= static_cast<double>(c);
        m2 /= static_cast<double>(c);
        for (std::size_t j = 0; j < c; ++j) dx[r * c + j] += (*rstd)[r] * (dxh[j] - m1 - xh[j] * m2);
      }
    }
  });
}

Var film(const Var& x, const Var& gamma, const Var& beta) {
  const std::size_t c = x.cols();
  const std::size_t batch = gamma.rows();
  require(gamma.cols() == c && beta.cols() == c, "film channel mismatch: features " + dims(x) +
                                                     " vs gamma " + dims(gamma) + ", beta " + dims(beta));
  require(beta.rows() == batch && batch > 0 && x.rows() % batch == 0,
          "film batch mismatch: features " + dims(x) + " vs gamma " + dims(gamma));
  const std::size_t t = x.rows() / batch;
  Tensor out(x.shape());
  for (std::size_t b = 0; b < batch; ++b) {
    const double* gm = gamma.value().data() + b * c;
    const double* bt = beta.value().data() + b * c;
    for (std::size_t r = 0; r < t; ++r) {
      const double* in = x.value().data() + (b * t + r) * c;
      double* o = out.data() + (b * t + r) * c;
      for (std::size_t j = 0; j < c; ++j) o[j] = in[j] * (1.0 + gm[j]) + bt[j];
    }
  }
  return make_node(std::move(out), {x, gamma, beta}, "film", [batch, t, c](Node& self) {
    const double* dy = self.grad.data();
    Node& px = parent(self, 0);
    Node& pg = parent(self, 1);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t r = 0; r < t; ++r) {
        const std::size_t row = (b * t + r) * c;
        for (std::size_t j = 0; j < c; ++j) {
          if (px.requires_grad) px.grad_buffer()[row + j] += dy[row + j] * (1.0 + pg.value[b * c + j]);
          if (pg.requires_grad) pg.grad_buffer()[b * c + j] += dy[row + j] * px.value[row + j];
          if (wants(self, 2)) parent(self, 2).grad_buffer()[b * c + j] += dy[row + j];
        }
      }
    }
  });
}

Var attention(const Var& q, const Var& k, const Var& v, std::size_t heads, std::size_t tokens, bool causal) {
  const std::size_t c = q.cols();
  if (heads == 0 || c % heads != 0) {
    throw ConfigError("attention width " + std::to_string(c) + " not divisible by " + std::to_string(heads) + " heads");
  }
  require(k.shape() == q.shape() && v.shape() == q.shape(), "attention q/k/v shape mismatch");
  require(tokens > 0 && q.rows() % tokens == 0, "attention rows not a multiple of the token count");
  const std::size_t batch = q.rows() / tokens;
  const std::size_t dh = c / heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::size_t tt = tokens * tokens;
  auto probs = std::make_shared<std::vector<double>>(batch * heads * tt, 0.0);
  Tensor out(q.shape());
  const OuterStride<> stride(static_cast<Eigen::Index>(c));
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = b * tokens * c + h * dh;
      ConstStridedMap qm(q.value().data() + off, tokens, dh, stride);
      ConstStridedMap km(k.value().data() + off, tokens, dh, stride);
      ConstStridedMap vm(v.value().data() + off, tokens, dh, stride);
      MatMap p(probs->data() + (b * heads + h) * tt, tokens, tokens);
      p.noalias() = (qm * km.transpose()) * inv;
      for (std::size_t i = 0; i < tokens; ++i) {
        const std::size_t last = causal ? i + 1 : tokens;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < last; ++j) mx = std::max(mx, p(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j < last; ++j) {
          p(i, j) = std::exp(p(i, j) - mx);
          z += p(i, j);
        }
        for (std::size_t j = 0; j < last; ++j) p(i, j) /= z;
        for (std::size_t j = last; j < tokens; ++j) p(i, j) = 0.0;
      }
      StridedMap om(out.data() + off, tokens, dh, stride);
      om.noalias() = p * vm;
    }
  }
  return make_node(std::move(out), {q, k, v}, "attention", [probs, batch, heads, tokens, c, dh, inv, tt](Node& self) {
    const OuterStride<> stride(static_cast<Eigen::Index>(c));
    Node& pq = parent(self, 0);
    Node& pk = parent(self, 1);
    Node& pv = parent(self, 2);
    RowMatrix dp(tokens, tokens);
    RowMatrix ds(tokens, tokens);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = b * tokens * c + h * dh;
        ConstStridedMap dout(self.grad.data() + off, tokens, dh, stride);
        ConstStridedMap qm(pq.value.data() + off, tokens, dh, stride);
        ConstStridedMap km(pk.value.data() + off, tokens, dh, stride);
        ConstStridedMap vm(pv.value.data() + off, tokens, dh, stride);
        ConstMatMap p(probs->data() + (b * heads + h) * tt, tokens, tokens);
        if (pv.requires_grad) {
          StridedMap dv(pv.grad_buffer().data() + off, tokens, dh, stride);
          dv.noalias() += p.transpose() * dout;
        }
        if (!pq.requires_grad && !pk.requires_grad) continue;
        dp.noalias() = dout * vm.transpose();
        for (std::size_t i = 0; i < tokens; ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < tokens; ++j) dot += dp(i, j) * p(i, j);
          for (std::size_t j = 0; j < tokens; ++j) ds(i, j) = p(i, j) * (dp(i, j) - dot) * inv;
        }
        if (pq.requires_grad) {
          StridedMap dq(pq.grad_buffer().data() + off, tokens, dh, stride);
          dq.noalias() += ds * km;
        }
        if (pk.requires_grad) {
          StridedMap dk(pk.grad_buffer().data() + off, tokens, dh, stride);
          dk.noalias() += ds.transpose() * qm;
        }
      }
    }
  });
}

Var concat_cols(const Var& a, const Var& b) {
  require(a.rows() == b.rows(), "concat_cols token mismatch: " + dims(a) + " vs " + dims(b));
  const std::size_t ca = a.cols();
  const std::size_t cb = b.cols();
  Tensor out(mat_shape(a.rows(), ca + cb));
  out.mat().leftCols(ca) = a.value().mat();
  out.mat().rightCols(cb) = b.value().mat();
  return make_node(std::move(out), {a, b}, "concat_cols", [ca, cb](Node& self) {
    if (wants(self, 0)) parent(self, 0).grad_buffer().mat() += self.grad.mat().leftCols(ca);
    if (wants(self, 1)) parent(self, 1).grad_buffer().mat() += self.grad.mat().rightCols(cb);
  });
}

Var concat_seq(const std::vector<Var>& parts, std::size_t batch) {
  require(!parts.empty() && batch > 0, "concat_seq needs parts and a positive batch");
  const std::size_t c = parts.front().cols();
  std::vector<std::size_t> lens;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require(p.cols() == c, "concat_seq width mismatch: " + dims(p));
    require(p.rows() % batch == 0, "concat_seq rows not divisible by batch: " + dims(p));
    lens.push_back(p.rows() / batch);
    total += lens.back();
  }
  Tensor out(mat_shape(batch * total, c));
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t at = b * total;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      out.mat().middleRows(at, lens[i]) = parts[i].value().mat().middleRows(b * lens[i], lens[i]);
      at += lens[i];
    }
  }
  return make_node(std::move(out), parts, "concat_seq", [lens, total, batch](Node& self) {
    for (std::size_t b = 0; b < batch; ++b) {
      std::size_t at = b * total;
      for (std::size_t i = 0; i < lens.size(); ++i) {
        if (wants(self, i)) {
          parent(self, i).grad_buffer().mat().middleRows(b * lens[i], lens[i]) +=
              self.grad.mat().middleRows(at, lens[i]);
        }
        at += lens[i];
      }
    }
  });
}

Var slice_cols(const Var& x, std::size_t start, std::size_t count) {
  require(start + count <= x.cols(), "slice_cols out of range on " + dims(x));
  Tensor out(mat_shape(x.rows(), count));
  out.mat() = x.value().mat().middleCols(start, count);
  return make_node(std::move(out), {x}, "slice_cols", [start, count](Node& self) {
    parent(self, 0).grad_buffer().mat().middleCols(start, count) += self.grad.mat();
  });
}

Var mean_pool(const Var& x, std::size_t batch) {
  require(batch > 0 && x.rows() % batch == 0, "mean_pool rows not divisible by batch: " + dims(x));
  const std::size_t t = x.rows() / batch;
  Tensor out(mat_shape(batch, x.cols()));
  for (std::size_t b = 0; b < batch; ++b) {
    out.mat().row(b) = x.value().mat().middleRows(b * t, t).colwise().sum() / static_cast<double>(t);
  }
  return make_node(std::move(out), {x}, "mean_pool", [batch, t](Node& self) {
    auto g = parent(self, 0).grad_buffer().mat();
    for (std::size_t b = 0; b < batch; ++b) {
      g.middleRows(b * t, t).rowwise() += self.grad.mat().row(b) / static_cast<double>(t);
    }
  });
}

Var embedding(const Var& table, std::span<const int> ids) {
  const std::size_t vocab = table.rows();
  std::vector<int> idv(ids.begin(), ids.end());
  for (int id : idv) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw IndexError("embedding id " + std::to_string(id) + " outside [0, " + std::to_string(vocab) + ")");
    }
  }
  Tensor out(mat_shape(idv.size(), table.cols()));
  for (std::size_t i = 0; i < idv.size(); ++i) out.mat().row(i) = table.value().mat().row(idv[i]);
  return make_node(std::move(out), {table}, "embedding", [idv](Node& self) {
    auto g = parent(self, 0).grad_buffer().mat();
    for (std::size_t i = 0; i < idv.size(); ++i) g.row(idv[i]) += self.grad.mat().row(i);
  });
}

Var gather_rows(const Var& x, std::span<const std::size_t> rows) {
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  for (auto r : idx) {
    if (r >= x.rows()) throw IndexError("gather_rows index " + std::to_string(r) + " out of range for " + dims(x));
  }
  Tensor out(mat_shape(idx.size(), x.cols()));
  for (std::size_t i = 0; i < idx.size(); ++i) out.mat().row(i) = x.value().mat().row(idx[i]);
  return make_node(std::move(out), {x}, "gather_rows", [idx](Node& self) {
    auto g = parent(self, 0).grad_buffer().mat();
    for (std::size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += self.grad.mat().row(i);
  });
}

Var softmax_cross_entropy(const Var& logits, std::span<const int> targets) {
  const std::size_t n = logits.rows();
  const std::size_t vocab = logits.cols();
  require(targets.size() == n, "softmax_cross_entropy expects one target per row");
  require(n > 0, "softmax_cross_entropy on empty batch");
  std::vector<int> tg(targets.begin(), targets.end());
  for (int t : tg) {
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      throw IndexError("target id " + std::to_string(t) + " outside [0, " + std::to_string(vocab) + ")");
    }
  }
  auto probs = std::make_shared<Tensor>(mat_shape(n, vocab));
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = logits.value().data() + r * vocab;
    double mx = row[0];
    for (std::size_t j = 1; j < vocab; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) z += std::exp(row[j] - mx);
    const double logz = mx + std::log(z);
    loss += logz - row[tg[r]];
    double* p = probs->data() + r * vocab;
    for (std::size_t j = 0; j < vocab; ++j) p[j] = std::exp(row[j] - logz);
  }
  loss /= static_cast<double>(n);
  return make_node(Tensor::scalar(loss), {logits}, "softmax_cross_entropy", [probs, tg, n, vocab](Node& self) {
    const double scale = self.grad[0] / static_cast<double>(n);
    Tensor& g = parent(self, 0).grad_buffer();
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t j = 0; j < vocab; ++j) {
        const double onehot = static_cast<int>(j) == tg[r] ? 1.0 : 0.0;
        g[r * vocab + j] += scale * ((*probs)[r * vocab + j] - onehot);
      }
    }
  });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return make_node(Tensor::scalar(s), {x}, "sum", [](Node& self) {
    Tensor& g = parent(self, 0).grad_buffer();
    for (auto& v : g.values()) v += self.grad[0];
  });
}

}  // namespace tvla::ops
