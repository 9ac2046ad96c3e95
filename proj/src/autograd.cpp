#include "crossenc/autograd.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "crossenc/errors.hpp"

namespace crossenc {

namespace {

using EMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

EMap emap(Tensor& t) { return EMap(t.data.data(), t.rows(), t.cols()); }
ECMap emap(const Tensor& t) { return ECMap(t.data.data(), t.rows(), t.cols()); }

bool needs_grad(const std::vector<Var>& parents) {
  for (const auto& p : parents)
    if (p->requires_grad) return true;
  return false;
}

// Nodes only keep a backprop closure when some ancestor is trainable, so
// evaluation-mode graphs stay cheap.
Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = needs_grad(parents);
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return n;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a->value.same_shape(b->value))
    throw NumericsError(std::string(op) + ": shape mismatch " + a->value.shape_str() + " vs " +
                        b->value.shape_str());
}

}  // namespace

Var make_param(Tensor value, std::string name) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  n->name = std::move(name);
  return n;
}

Var make_const(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return n;
}

void backward(const Var& loss) {
  if (loss->value.numel() != 1)
    throw NumericsError("backward: loss must be scalar, got " + loss->value.shape_str());

  // Iterative DFS with gray/black marking; a gray revisit is a cycle.
  std::vector<Node*> order;
  std::unordered_map<Node*, char> state;  // 1 = on stack, 2 = done
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(loss.get(), 0);
  state[loss.get()] = 1;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      auto it = state.find(parent);
      if (it == state.end()) {
        state[parent] = 1;
        stack.emplace_back(parent, 0);
      } else if (it->second == 1) {
        throw NumericsError("backward: cycle in computation record");
      }
    } else {
      state[node] = 2;
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss->ensure_grad();
  loss->grad.data[0] = 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && !n->grad.empty()) n->backprop(*n);
  }
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Tensor out = a->value;
  emap(out) += emap(b->value);
  return make_node(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) emap(a->ensure_grad()) += emap(n.grad);
    if (b->requires_grad) emap(b->ensure_grad()) += emap(n.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Tensor out = a->value;
  emap(out) -= emap(b->value);
  return make_node(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) emap(a->ensure_grad()) += emap(n.grad);
    if (b->requires_grad) emap(b->ensure_grad()) -= emap(n.grad);
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  Tensor out = a->value;
  emap(out).array() *= emap(b->value).array();
  return make_node(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->requires_grad)
      emap(a->ensure_grad()).array() += emap(n.grad).array() * emap(b->value).array();
    if (b->requires_grad)
      emap(b->ensure_grad()).array() += emap(n.grad).array() * emap(a->value).array();
  });
}

Var scale(const Var& a, float c) {
  Tensor out = a->value;
  emap(out) *= c;
  return make_node(std::move(out), {a}, [a, c](Node& n) {
    if (a->requires_grad) emap(a->ensure_grad()) += c * emap(n.grad);
  });
}

Var add_rowvec(const Var& a, const Var& row) {
  if (row->value.rows() != 1 || row->value.cols() != a->value.cols())
    throw NumericsError("add_rowvec: expected 1x" + std::to_string(a->value.cols()) +
                        " bias, got " + row->value.shape_str());
  Tensor out = a->value;
  emap(out).rowwise() += emap(row->value).row(0);
  return make_node(std::move(out), {a, row}, [a, row](Node& n) {
    if (a->requires_grad) emap(a->ensure_grad()) += emap(n.grad);
    if (row->requires_grad) emap(row->ensure_grad()).row(0) += emap(n.grad).colwise().sum();
  });
}

Var matmul(const Var& a, const Var& b) {
  if (a->value.cols() != b->value.rows())
    throw NumericsError("matmul: inner dimensions differ, " + a->value.shape_str() + " * " +
                        b->value.shape_str());
  Tensor out(a->value.rows(), b->value.cols());
  emap(out).noalias() = emap(a->value) * emap(b->value);
  return make_node(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) emap(a->ensure_grad()).noalias() += emap(n.grad) * emap(b->value).transpose();
    if (b->requires_grad) emap(b->ensure_grad()).noalias() += emap(a->value).transpose() * emap(n.grad);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  if (a->value.cols() != b->value.cols())
    throw NumericsError("matmul_nt: inner dimensions differ, " + a->value.shape_str() + " * " +
                        b->value.shape_str() + "^T");
  Tensor out(a->value.rows(), b->value.rows());
  emap(out).noalias() = emap(a->value) * emap(b->value).transpose();
  return make_node(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) emap(a->ensure_grad()).noalias() += emap(n.grad) * emap(b->value);
    if (b->requires_grad) emap(b->ensure_grad()).noalias() += emap(n.grad).transpose() * emap(a->value);
  });
}

Var slice_rows(const Var& x, int begin, int end) {
  const int r = x->value.rows(), c = x->value.cols();
  if (begin < 0 || end > r || begin >= end)
    throw NumericsError("slice_rows: bad range [" + std::to_string(begin) + "," +
                        std::to_string(end) + ") for " + x->value.shape_str());
  Tensor out(end - begin, c);
  std::copy(x->value.data.begin() + static_cast<size_t>(begin) * c,
            x->value.data.begin() + static_cast<size_t>(end) * c, out.data.begin());
  return make_node(std::move(out), {x}, [x, begin](Node& n) {
    if (!x->requires_grad) return;
    emap(x->ensure_grad()).middleRows(begin, n.value.rows()) += emap(n.grad);
  });
}

Var slice_cols(const Var& x, int begin, int end) {
  const int c = x->value.cols();
  if (begin < 0 || end > c || begin >= end)
    throw NumericsError("slice_cols: bad range [" + std::to_string(begin) + "," +
                        std::to_string(end) + ") for " + x->value.shape_str());
  Tensor out(x->value.rows(), end - begin);
  emap(out) = emap(x->value).middleCols(begin, end - begin);
  return make_node(std::move(out), {x}, [x, begin](Node& n) {
    if (!x->requires_grad) return;
    emap(x->ensure_grad()).middleCols(begin, n.value.cols()) += emap(n.grad);
  });
}

Var concat_rows(const std::vector<Var>& xs) {
  if (xs.empty()) throw NumericsError("concat_rows: empty input");
  const int c = xs[0]->value.cols();
  int total = 0;
  for (const auto& x : xs) {
    if (x->value.cols() != c) throw NumericsError("concat_rows: column counts differ");
    total += x->value.rows();
  }
  Tensor out(total, c);
  int at = 0;
  for (const auto& x : xs) {
    emap(out).middleRows(at, x->value.rows()) = emap(x->value);
    at += x->value.rows();
  }
  return make_node(std::move(out), xs, [xs](Node& n) {
    int at = 0;
    for (const auto& x : xs) {
      const int r = x->value.rows();
      if (x->requires_grad) emap(x->ensure_grad()) += emap(n.grad).middleRows(at, r);
      at += r;
    }
  });
}

Var concat_cols(const std::vector<Var>& xs) {
  if (xs.empty()) throw NumericsError("concat_cols: empty input");
  const int r = xs[0]->value.rows();
  int total = 0;
  for (const auto& x : xs) {
    if (x->value.rows() != r) throw NumericsError("concat_cols: row counts differ");
    total += x->value.cols();
  }
  Tensor out(r, total);
  int at = 0;
  for (const auto& x : xs) {
    emap(out).middleCols(at, x->value.cols()) = emap(x->value);
    at += x->value.cols();
  }
  return make_node(std::move(out), xs, [xs](Node& n) {
    int at = 0;
    for (const auto& x : xs) {
      const int c = x->value.cols();
      if (x->requires_grad) emap(x->ensure_grad()) += emap(n.grad).middleCols(at, c);
      at += c;
    }
  });
}

Var gather_rows(const Var& x, const std::vector<int>& rows) {
  if (rows.empty()) throw NumericsError("gather_rows: empty index list");
  const int r = x->value.rows(), c = x->value.cols();
  Tensor out(static_cast<int>(rows.size()), c);
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= r)
      throw NumericsError("gather_rows: row " + std::to_string(rows[i]) + " out of range for " +
                          x->value.shape_str());
    emap(out).row(static_cast<int>(i)) = emap(x->value).row(rows[i]);
  }
  return make_node(std::move(out), {x}, [x, rows](Node& n) {
    if (!x->requires_grad) return;
    auto g = emap(x->ensure_grad());
    for (size_t i = 0; i < rows.size(); ++i) g.row(rows[i]) += emap(n.grad).row(static_cast<int>(i));
  });
}

Var flatten_row(const Var& x) {
  Tensor out(1, static_cast<int>(x->value.numel()));
  out.data = x->value.data;
  return make_node(std::move(out), {x}, [x](Node& n) {
    if (!x->requires_grad) return;
    auto& g = x->ensure_grad();
    for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += n.grad.data[i];
  });
}

Var pick(const Var& x, int r, int c) {
  if (r < 0 || r >= x->value.rows() || c < 0 || c >= x->value.cols())
    throw NumericsError("pick: (" + std::to_string(r) + "," + std::to_string(c) +
                        ") out of range for " + x->value.shape_str());
  Tensor out = Tensor::scalar(x->value.at(r, c));
  return make_node(std::move(out), {x}, [x, r, c](Node& n) {
    if (x->requires_grad) x->ensure_grad().at(r, c) += n.grad.data[0];
  });
}

Var mean_vars(const std::vector<Var>& xs) {
  if (xs.empty()) throw NumericsError("mean_vars: empty input");
  Tensor out = xs[0]->value;
  for (size_t i = 1; i < xs.size(); ++i) {
    if (!xs[i]->value.same_shape(out)) throw NumericsError("mean_vars: shape mismatch");
    emap(out) += emap(xs[i]->value);
  }
  const float inv = 1.0f / static_cast<float>(xs.size());
  emap(out) *= inv;
  return make_node(std::move(out), xs, [xs, inv](Node& n) {
    for (const auto& x : xs)
      if (x->requires_grad) emap(x->ensure_grad()) += inv * emap(n.grad);
  });
}

Var gelu(const Var& x) {
  Tensor out = x->value;
  for (auto& v : out.data) {
    v = 0.5f * v * (1.0f + std::erf(v * static_cast<float>(M_SQRT1_2)));
  }
  return make_node(std::move(out), {x}, [x](Node& n) {
    if (!x->requires_grad) return;
    auto& g = x->ensure_grad();
    for (size_t i = 0; i < g.data.size(); ++i) {
      const float v = x->value.data[i];
      const float phi = std::exp(-0.5f * v * v) * 0.3989422804014327f;  // N(0,1) pdf
      const float Phi = 0.5f * (1.0f + std::erf(v * static_cast<float>(M_SQRT1_2)));
      g.data[i] += n.grad.data[i] * (Phi + v * phi);
    }
  });
}

Var relu(const Var& x) {
  Tensor out = x->value;
  for (auto& v : out.data) v = std::max(v, 0.0f);
  return make_node(std::move(out), {x}, [x](Node& n) {
    if (!x->requires_grad) return;
    auto& g = x->ensure_grad();
    for (size_t i = 0; i < g.data.size(); ++i)
      if (x->value.data[i] > 0.0f) g.data[i] += n.grad.data[i];
  });
}

Var log_clamped(const Var& x, float floor) {
  Tensor out = x->value;
  for (auto& v : out.data) v = std::log(std::max(v, floor));
  return make_node(std::move(out), {x}, [x, floor](Node& n) {
    if (!x->requires_grad) return;
    auto& g = x->ensure_grad();
    for (size_t i = 0; i < g.data.size(); ++i) {
      const float v = x->value.data[i];
      if (v > floor) g.data[i] += n.grad.data[i] / v;
    }
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, float eps) {
  const int r = x->value.rows(), c = x->value.cols();
  if (gamma->value.rows() != 1 || gamma->value.cols() != c || !gamma->value.same_shape(beta->value))
    throw NumericsError("layer_norm: gamma/beta must be 1x" + std::to_string(c));
  Tensor out(r, c);
  Tensor norm(r, c);      // (x - mu) / sigma, reused in backward
  Tensor inv_sigma(r, 1);
  for (int i = 0; i < r; ++i) {
    double mean = 0.0;
    for (int j = 0; j < c; ++j) mean += x->value.at(i, j);
    mean /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) {
      const double d = x->value.at(i, j) - mean;
      var += d * d;
    }
    var /= c;
    const float inv = 1.0f / std::sqrt(static_cast<float>(var) + eps);
    inv_sigma.at(i, 0) = inv;
    for (int j = 0; j < c; ++j) {
      const float nj = (x->value.at(i, j) - static_cast<float>(mean)) * inv;
      norm.at(i, j) = nj;
      out.at(i, j) = nj * gamma->value.at(0, j) + beta->value.at(0, j);
    }
  }
  return make_node(std::move(out), {x, gamma, beta},
                   [x, gamma, beta, norm, inv_sigma](Node& n) {
                     const int r = n.value.rows(), c = n.value.cols();
                     if (gamma->requires_grad || beta->requires_grad) {
                       auto& gg = gamma->ensure_grad();
                       auto& gb = beta->ensure_grad();
                       for (int i = 0; i < r; ++i)
                         for (int j = 0; j < c; ++j) {
                           gg.at(0, j) += n.grad.at(i, j) * norm.at(i, j);
                           gb.at(0, j) += n.grad.at(i, j);
                         }
                     }
                     if (!x->requires_grad) return;
                     auto& gx = x->ensure_grad();
                     for (int i = 0; i < r; ++i) {
                       double sum_d = 0.0, sum_dn = 0.0;
                       for (int j = 0; j < c; ++j) {
                         const double d = static_cast<double>(n.grad.at(i, j)) * gamma->value.at(0, j);
                         sum_d += d;
                         sum_dn += d * norm.at(i, j);
                       }
                       const double mean_d = sum_d / c, mean_dn = sum_dn / c;
                       const float inv = inv_sigma.at(i, 0);
                       for (int j = 0; j < c; ++j) {
                         const double d = static_cast<double>(n.grad.at(i, j)) * gamma->value.at(0, j);
                         gx.at(i, j) += static_cast<float>((d - mean_d - norm.at(i, j) * mean_dn) * inv);
                       }
                     }
                   });
}

void softmax_rows_inplace(Tensor& t) {
  const int r = t.rows(), c = t.cols();
  for (int i = 0; i < r; ++i) {
    float mx = t.at(i, 0);
    for (int j = 1; j < c; ++j) mx = std::max(mx, t.at(i, j));
    double sum = 0.0;
    for (int j = 0; j < c; ++j) {
      const float e = std::exp(t.at(i, j) - mx);
      t.at(i, j) = e;
      sum += e;
    }
    const float inv = static_cast<float>(1.0 / sum);
    for (int j = 0; j < c; ++j) t.at(i, j) *= inv;
  }
}

namespace {

Var softmax_impl(const Var& x, const Tensor* mask) {
  const int r = x->value.rows(), c = x->value.cols();
  Tensor out = x->value;
  if (mask) {
    if (!mask->same_shape(out)) throw NumericsError("softmax_rows: mask shape mismatch");
    emap(out) += emap(*mask);
  }
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j)
      if (!std::isfinite(x->value.at(i, j)))
        throw NumericsError("softmax_rows: non-finite input at row " + std::to_string(i));
  softmax_rows_inplace(out);
  Tensor y = out;  // captured for backward
  return make_node(std::move(out), {x}, [x, y](Node& n) {
    if (!x->requires_grad) return;
    const int r = n.value.rows(), c = n.value.cols();
    auto& g = x->ensure_grad();
    for (int i = 0; i < r; ++i) {
      double dot = 0.0;
      for (int j = 0; j < c; ++j) dot += static_cast<double>(n.grad.at(i, j)) * y.at(i, j);
      for (int j = 0; j < c; ++j)
        g.at(i, j) += (n.grad.at(i, j) - static_cast<float>(dot)) * y.at(i, j);
    }
  });
}

}  // namespace

Var softmax_rows(const Var& x) { return softmax_impl(x, nullptr); }

Var softmax_rows_masked(const Var& x, const Tensor& additive_mask) {
  return softmax_impl(x, &additive_mask);
}

Var dropout(const Var& x, float p, bool training, Rng& rng) {
  if (!training || p <= 0.0f) return x;
  if (p >= 1.0f) throw NumericsError("dropout: rate must be < 1");
  const float keep = 1.0f - p;
  Tensor mask(x->value.rows(), x->value.cols());
  for (auto& m : mask.data) m = (rng.uniform() < p) ? 0.0f : 1.0f / keep;
  Tensor out = x->value;
  emap(out).array() *= emap(mask).array();
  return make_node(std::move(out), {x}, [x, mask](Node& n) {
    if (!x->requires_grad) return;
    emap(x->ensure_grad()).array() += emap(n.grad).array() * emap(mask).array();
  });
}

Var embedding(const Var& table, const std::vector<int>& ids) {
  if (ids.empty()) throw NumericsError("embedding: empty id list");
  const int v = table->value.rows(), d = table->value.cols();
  Tensor out(static_cast<int>(ids.size()), d);
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= v)
      throw NumericsError("embedding: id " + std::to_string(ids[i]) + " out of range at position " +
                          std::to_string(i) + " (table has " + std::to_string(v) + " rows)");
    emap(out).row(static_cast<int>(i)) = emap(table->value).row(ids[i]);
  }
  return make_node(std::move(out), {table}, [table, ids](Node& n) {
    if (!table->requires_grad) return;
    auto g = emap(table->ensure_grad());
    for (size_t i = 0; i < ids.size(); ++i) g.row(ids[i]) += emap(n.grad).row(static_cast<int>(i));
  });
}

Var cross_entropy_mean(const Var& logits, const std::vector<int>& labels) {
  const int r = logits->value.rows(), c = logits->value.cols();
  if (static_cast<int>(labels.size()) != r)
    throw NumericsError("cross_entropy_mean: " + std::to_string(labels.size()) + " labels for " +
                        std::to_string(r) + " rows");
  Tensor probs = logits->value;
  softmax_rows_inplace(probs);
  double nll = 0.0;
  int counted = 0;
  for (int i = 0; i < r; ++i) {
    if (labels[i] == -1) continue;  // row carries no label
    if (labels[i] < 0 || labels[i] >= c)
      throw NumericsError("cross_entropy_mean: label " + std::to_string(labels[i]) +
                          " out of range at row " + std::to_string(i));
    nll -= std::log(std::max(static_cast<double>(probs.at(i, labels[i])), 1e-30));
    ++counted;
  }
  if (counted == 0) throw NumericsError("cross_entropy_mean: no labelled rows");
  Tensor out = Tensor::scalar(static_cast<float>(nll / counted));
  return make_node(std::move(out), {logits}, [logits, probs, labels, counted](Node& n) {
    if (!logits->requires_grad) return;
    const int r = probs.rows(), c = probs.cols();
    const float s = n.grad.data[0] / static_cast<float>(counted);
    auto& g = logits->ensure_grad();
    for (int i = 0; i < r; ++i) {
      if (labels[i] == -1) continue;
      for (int j = 0; j < c; ++j)
        g.at(i, j) += s * (probs.at(i, j) - (j == labels[i] ? 1.0f : 0.0f));
    }
  });
}

Var sum_all(const Var& x) {
  double s = 0.0;
  for (float v : x->value.data) s += v;
  Tensor out = Tensor::scalar(static_cast<float>(s));
  return make_node(std::move(out), {x}, [x](Node& n) {
    if (!x->requires_grad) return;
    auto& g = x->ensure_grad();
    for (auto& v : g.data) v += n.grad.data[0];
  });
}

Var mean_all(const Var& x) { return scale(sum_all(x), 1.0f / static_cast<float>(x->value.numel())); }

}  // namespace crossenc
