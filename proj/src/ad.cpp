#include "mever/ad.hpp"

#include <cmath>
#include <limits>

#include "mever/error.hpp"

namespace mever::ad {

namespace {

void require_same_tape(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) {
    throw Error(ErrorKind::InvalidArgument, "vars recorded on different tapes");
  }
}

void require_shape(bool ok, const char* op, const Mat& a, const Mat& b) {
  if (!ok) {
    throw Error(ErrorKind::ShapeMismatch,
                std::string(op) + ": " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                    " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
}

}  // namespace

const Mat& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Mat value) { return record(std::move(value), false, nullptr); }

Var Tape::param(const Parameter& p) {
  if (auto it = param_ids_.find(&p); it != param_ids_.end()) return Var(this, it->second);
  Var v = record(p.value, record_grads_, nullptr);
  nodes_[v.id_].param = &p;
  param_ids_.emplace(&p, v.id_);
  return v;
}

Var Tape::record(Mat value, bool needs_grad, Backward fn) {
  Node node;
  node.value = std::move(value);
  node.needs_grad = needs_grad;
  if (needs_grad) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::accumulate(int id, const Mat& grad) {
  Node& n = nodes_[id];
  if (!n.needs_grad) return;
  if (!n.has_grad) {
    n.grad = grad;
    n.has_grad = true;
  } else {
    n.grad += grad;
  }
}

void Tape::backward(const Var& root) {
  if (root.tape_ != this || root.rows() != 1 || root.cols() != 1) {
    throw Error(ErrorKind::InvalidArgument, "backward root must be a 1x1 var on this tape");
  }
  accumulate(root.id_, Mat::Ones(1, 1));
  for (int i = root.id_; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.has_grad) continue;
    if (n.param != nullptr) {
      n.param->grad += n.grad;
    } else if (n.backward) {
      // accumulate() never reallocates nodes_, so the reference stays valid.
      n.backward(*this, n.grad);
    }
  }
}

Var matmul(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_shape(a.cols() == b.rows(), "matmul", a.value(), b.value());
  Tape& t = *a.tape();
  Mat out = a.value() * b.value();
  const int ia = a.id(), ib = b.id();
  return t.record(std::move(out), t.needs_grad(a) || t.needs_grad(b), [ia, ib](Tape& t, const Mat& g) {
    t.accumulate(ia, g * t.value(ib).transpose());
    t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

Var add(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "add", a.value(), b.value());
  Tape& t = *a.tape();
  const int ia = a.id(), ib = b.id();
  return t.record(a.value() + b.value(), t.needs_grad(a) || t.needs_grad(b), [ia, ib](Tape& t, const Mat& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "sub", a.value(), b.value());
  Tape& t = *a.tape();
  const int ia = a.id(), ib = b.id();
  return t.record(a.value() - b.value(), t.needs_grad(a) || t.needs_grad(b), [ia, ib](Tape& t, const Mat& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, -g);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "mul", a.value(), b.value());
  Tape& t = *a.tape();
  const int ia = a.id(), ib = b.id();
  return t.record(a.value().cwiseProduct(b.value()), t.needs_grad(a) || t.needs_grad(b),
                  [ia, ib](Tape& t, const Mat& g) {
                    t.accumulate(ia, g.cwiseProduct(t.value(ib)));
                    t.accumulate(ib, g.cwiseProduct(t.value(ia)));
                  });
}

Var scale(const Var& a, double s) {
  Tape& t = *a.tape();
  const int ia = a.id();
  return t.record(a.value() * s, t.needs_grad(a), [ia, s](Tape& t, const Mat& g) { t.accumulate(ia, g * s); });
}

Var add_row(const Var& a, const Var& row) {
  require_same_tape(a, row);
  require_shape(row.rows() == 1 && row.cols() == a.cols(), "add_row", a.value(), row.value());
  Tape& t = *a.tape();
  Mat out = a.value().rowwise() + row.value().row(0);
  const int ia = a.id(), ir = row.id();
  return t.record(std::move(out), t.needs_grad(a) || t.needs_grad(row), [ia, ir](Tape& t, const Mat& g) {
    t.accumulate(ia, g);
    t.accumulate(ir, g.colwise().sum());
  });
}

Var transpose(const Var& a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  return t.record(a.value().transpose(), t.needs_grad(a),
                  [ia](Tape& t, const Mat& g) { t.accumulate(ia, g.transpose()); });
}

Var vstack(std::span<const Var> parts) {
  if (parts.empty()) throw Error(ErrorKind::InvalidArgument, "vstack of nothing");
  Tape& t = *parts[0].tape();
  const Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  bool needs = false;
  for (const Var& p : parts) {
    require_same_tape(parts[0], p);
    require_shape(p.cols() == cols, "vstack", parts[0].value(), p.value());
    rows += p.rows();
    needs = needs || t.needs_grad(p);
  }
  Mat out(rows, cols);
  std::vector<std::pair<int, Eigen::Index>> layout;
  Eigen::Index r = 0;
  for (const Var& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    layout.emplace_back(p.id(), p.rows());
    r += p.rows();
  }
  return t.record(std::move(out), needs, [layout = std::move(layout)](Tape& t, const Mat& g) {
    Eigen::Index r = 0;
    for (const auto& [id, n] : layout) {
      t.accumulate(id, g.middleRows(r, n));
      r += n;
    }
  });
}

Var hstack(std::span<const Var> parts) {
  if (parts.empty()) throw Error(ErrorKind::InvalidArgument, "hstack of nothing");
  Tape& t = *parts[0].tape();
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  bool needs = false;
  for (const Var& p : parts) {
    require_same_tape(parts[0], p);
    require_shape(p.rows() == rows, "hstack", parts[0].value(), p.value());
    cols += p.cols();
    needs = needs || t.needs_grad(p);
  }
  Mat out(rows, cols);
  std::vector<std::pair<int, Eigen::Index>> layout;
  Eigen::Index c = 0;
  for (const Var& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    layout.emplace_back(p.id(), p.cols());
    c += p.cols();
  }
  return t.record(std::move(out), needs, [layout = std::move(layout)](Tape& t, const Mat& g) {
    Eigen::Index c = 0;
    for (const auto& [id, n] : layout) {
      t.accumulate(id, g.middleCols(c, n));
      c += n;
    }
  });
}

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) {
    throw Error(ErrorKind::ShapeMismatch, "slice_rows out of range");
  }
  Tape& t = *a.tape();
  const int ia = a.id();
  const Eigen::Index rows = a.rows(), cols = a.cols();
  return t.record(a.value().middleRows(start, count), t.needs_grad(a),
                  [ia, start, count, rows, cols](Tape& t, const Mat& g) {
                    Mat full = Mat::Zero(rows, cols);
                    full.middleRows(start, count) = g;
                    t.accumulate(ia, full);
                  });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw Error(ErrorKind::ShapeMismatch, "slice_cols out of range");
  }
  Tape& t = *a.tape();
  const int ia = a.id();
  const Eigen::Index rows = a.rows(), cols = a.cols();
  return t.record(a.value().middleCols(start, count), t.needs_grad(a),
                  [ia, start, count, rows, cols](Tape& t, const Mat& g) {
                    Mat full = Mat::Zero(rows, cols);
                    full.middleCols(start, count) = g;
                    t.accumulate(ia, full);
                  });
}

Var gather_rows(const Var& table, std::span<const int> ids) {
  Tape& t = *table.tape();
  const Mat& src = table.value();
  Mat out(static_cast<Eigen::Index>(ids.size()), src.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= src.rows()) throw Error(ErrorKind::ShapeMismatch, "gather_rows id out of range");
    out.row(static_cast<Eigen::Index>(i)) = src.row(ids[i]);
  }
  const int it = table.id();
  std::vector<int> idx(ids.begin(), ids.end());
  const Eigen::Index rows = src.rows(), cols = src.cols();
  return t.record(std::move(out), t.needs_grad(table), [it, idx = std::move(idx), rows, cols](Tape& t, const Mat& g) {
    Mat full = Mat::Zero(rows, cols);
    for (std::size_t i = 0; i < idx.size(); ++i) full.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
    t.accumulate(it, full);
  });
}

Var sigmoid(const Var& a) {
  Tape& t = *a.tape();
  Mat out = a.value().unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  const int ia = a.id();
  const int io = static_cast<int>(t.size());  // id the output is about to get
  return t.record(std::move(out), t.needs_grad(a), [io, ia](Tape& t, const Mat& g) {
    const Mat& s = t.value(io);
    t.accumulate(ia, g.cwiseProduct(s.cwiseProduct((1.0 - s.array()).matrix())));
  });
}

Var gelu(const Var& a) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double c = 0.044715;
  Tape& t = *a.tape();
  Mat out = a.value().unaryExpr([](double x) { return 0.5 * x * (1.0 + std::tanh(k * (x + c * x * x * x))); });
  const int ia = a.id();
  return t.record(std::move(out), t.needs_grad(a), [ia](Tape& t, const Mat& g) {
    Mat d = t.value(ia).unaryExpr([](double x) {
      const double u = k * (x + c * x * x * x);
      const double th = std::tanh(u);
      const double du = k * (1.0 + 3.0 * c * x * x);
      return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
    });
    t.accumulate(ia, g.cwiseProduct(d));
  });
}

Var log(const Var& a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  return t.record(a.value().array().log().matrix(), t.needs_grad(a), [ia](Tape& t, const Mat& g) {
    t.accumulate(ia, g.cwiseQuotient(t.value(ia)));
  });
}

Var clamp_min(const Var& a, double floor) {
  Tape& t = *a.tape();
  const int ia = a.id();
  return t.record(a.value().cwiseMax(floor), t.needs_grad(a), [ia, floor](Tape& t, const Mat& g) {
    const Mat& x = t.value(ia);
    Mat pass = (x.array() >= floor).cast<double>().matrix();
    t.accumulate(ia, g.cwiseProduct(pass));
  });
}

namespace {

Mat softmax_rows_value(const Mat& x) {
  Mat out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    RowVec e = (x.row(r).array() - m).exp().matrix();
    out.row(r) = e / e.sum();
  }
  return out;
}

Mat log_softmax_rows_value(const Mat& x) {
  Mat out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    const double lse = m + std::log((x.row(r).array() - m).exp().sum());
    out.row(r) = x.row(r).array() - lse;
  }
  return out;
}

}  // namespace

Var softmax_rows(const Var& a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  const int io = static_cast<int>(t.size());
  return t.record(softmax_rows_value(a.value()), t.needs_grad(a), [io, ia](Tape& t, const Mat& g) {
    const Mat& s = t.value(io);
    Mat dx(s.rows(), s.cols());
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
      const double dot = g.row(r).dot(s.row(r));
      dx.row(r) = s.row(r).cwiseProduct((g.row(r).array() - dot).matrix());
    }
    t.accumulate(ia, dx);
  });
}

Var log_softmax_rows(const Var& a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  const int io = static_cast<int>(t.size());
  return t.record(log_softmax_rows_value(a.value()), t.needs_grad(a), [io, ia](Tape& t, const Mat& g) {
    const Mat& ls = t.value(io);
    Mat dx(ls.rows(), ls.cols());
    for (Eigen::Index r = 0; r < ls.rows(); ++r) {
      const double gs = g.row(r).sum();
      dx.row(r) = g.row(r) - (ls.row(r).array().exp() * gs).matrix();
    }
    t.accumulate(ia, dx);
  });
}

Var layer_norm_rows(const Var& x, const Var& gain, const Var& bias, double eps) {
  require_same_tape(x, gain);
  require_same_tape(x, bias);
  require_shape(gain.rows() == 1 && gain.cols() == x.cols(), "layer_norm gain", x.value(), gain.value());
  require_shape(bias.rows() == 1 && bias.cols() == x.cols(), "layer_norm bias", x.value(), bias.value());
  Tape& t = *x.tape();
  const Mat& xv = x.value();
  const Eigen::Index n = xv.cols();
  Mat xhat(xv.rows(), n);
  Vec inv_std(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double mu = xv.row(r).mean();
    const double var = (xv.row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mu) * inv_std(r);
  }
  Mat out = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
  out.rowwise() += bias.value().row(0);
  const int ix = x.id(), ig = gain.id(), ib = bias.id();
  const bool needs = t.needs_grad(x) || t.needs_grad(gain) || t.needs_grad(bias);
  return t.record(std::move(out), needs, [ix, ig, ib, xhat, inv_std, n](Tape& t, const Mat& g) {
    const RowVec gv = t.value(ig).row(0);
    t.accumulate(ig, g.cwiseProduct(xhat).colwise().sum());
    t.accumulate(ib, g.colwise().sum());
    Mat dx(g.rows(), n);
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      RowVec dxhat = g.row(r).cwiseProduct(gv);
      const double m1 = dxhat.mean();
      const double m2 = dxhat.dot(xhat.row(r)) / static_cast<double>(n);
      dx.row(r) = ((dxhat.array() - m1 - xhat.row(r).array() * m2) * inv_std(r)).matrix();
    }
    t.accumulate(ix, dx);
  });
}

Var sum(const Var& a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  const Eigen::Index rows = a.rows(), cols = a.cols();
  Mat out(1, 1);
  out(0, 0) = a.value().sum();
  return t.record(std::move(out), t.needs_grad(a), [ia, rows, cols](Tape& t, const Mat& g) {
    t.accumulate(ia, Mat::Constant(rows, cols, g(0, 0)));
  });
}

Var mean_rows(const Var& a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  const Eigen::Index rows = a.rows();
  return t.record(a.value().colwise().mean(), t.needs_grad(a), [ia, rows](Tape& t, const Mat& g) {
    t.accumulate(ia, g.replicate(rows, 1) / static_cast<double>(rows));
  });
}

Var mean(std::span<const Var> parts) {
  if (parts.empty()) throw Error(ErrorKind::InvalidArgument, "mean of nothing");
  Var acc = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) acc = add(acc, parts[i]);
  return scale(acc, 1.0 / static_cast<double>(parts.size()));
}

Var detach(const Var& a) { return a.tape()->constant(a.value()); }

Var nll_rows(const Var& logits, std::span<const int> targets, double floor) {
  if (static_cast<Eigen::Index>(targets.size()) != logits.rows()) {
    throw Error(ErrorKind::LengthMismatch, "nll_rows: one target per row required");
  }
  Tape& t = *logits.tape();
  const Mat ls = log_softmax_rows_value(logits.value());
  const double log_floor = std::log(floor);
  double total = 0.0;
  std::vector<char> active(targets.size(), 0);
  for (std::size_t r = 0; r < targets.size(); ++r) {
    const int y = targets[r];
    if (y < 0 || y >= ls.cols()) throw Error(ErrorKind::UnknownLabel, "nll_rows target out of range");
    const double lp = ls(static_cast<Eigen::Index>(r), y);
    if (lp >= log_floor) {
      total -= lp;
      active[r] = 1;
    } else {
      total -= log_floor;
    }
  }
  Mat out(1, 1);
  out(0, 0) = total;
  const int il = logits.id();
  std::vector<int> tg(targets.begin(), targets.end());
  return t.record(std::move(out), t.needs_grad(logits),
                  [il, ls, tg = std::move(tg), active = std::move(active)](Tape& t, const Mat& g) {
                    Mat dx = Mat::Zero(ls.rows(), ls.cols());
                    for (std::size_t r = 0; r < tg.size(); ++r) {
                      if (!active[r]) continue;
                      const auto row = static_cast<Eigen::Index>(r);
                      dx.row(row) = ls.row(row).array().exp();
                      dx(row, tg[r]) -= 1.0;
                    }
                    t.accumulate(il, dx * g(0, 0));
                  });
}

}  // namespace mever::ad
