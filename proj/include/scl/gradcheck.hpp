#pragma once

#include <cstdio>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "scl/autodiff.hpp"
#include "scl/tensor.hpp"

namespace scl {

// Central finite differences around the current parameter values. Each listed
// tensor is perturbed one coordinate at a time; loss() must re-read the
// tensors on every call.
template <typename T>
GradMap<T> finite_diff_grad(const std::function<T()>& loss,
                            const std::vector<std::pair<std::string, Tensor<T>*>>& params,
                            T eps = T(1e-5)) {
  GradMap<T> out;
  for (const auto& [name, tensor] : params) {
    Tensor<T> g(tensor->shape);
    for (std::int64_t i = 0; i < tensor->size(); ++i) {
      const T saved = (*tensor)[i];
      (*tensor)[i] = saved + eps;
      const T up = loss();
      (*tensor)[i] = saved - eps;
      const T down = loss();
      (*tensor)[i] = saved;
      g[i] = (up - down) / (T(2) * eps);
    }
    out.emplace(name, std::move(g));
  }
  return out;
}

inline double grad_rel_err(double analytic, double fd) {
  const double denom = std::max({std::abs(analytic), std::abs(fd), 1e-3});
  return std::abs(analytic - fd) / denom;
}

struct GradCheckRow {
  std::string name;
  double max_rel_err = 0.0;
  bool pass = true;
};

struct GradCheckReport {
  std::string what;
  std::vector<GradCheckRow> rows;

  bool pass() const {
    for (const auto& r : rows)
      if (!r.pass) return false;
    return true;
  }

  double max_rel_err() const {
    double m = 0.0;
    for (const auto& r : rows) m = std::max(m, r.max_rel_err);
    return m;
  }

  std::string to_text() const {
    std::string s;
    for (const auto& r : rows) {
      char line[256];
      std::snprintf(line, sizeof(line), "%-40s %12.3e %s\n", (what + "/" + r.name).c_str(),
                    r.max_rel_err, r.pass ? "PASS" : "FAIL");
      s += line;
    }
    return s;
  }
};

// Compares analytic gradients against central finite differences; one row per
// parameter with its worst relative error.
template <typename T>
GradCheckReport gradcheck(std::string what,
                          const std::vector<std::pair<std::string, Tensor<T>*>>& params,
                          const std::function<T()>& loss,
                          const std::function<GradMap<T>()>& analytic_grads, double tol = 1e-4,
                          T eps = T(1e-5)) {
  GradCheckReport report;
  report.what = std::move(what);
  GradMap<T> analytic = analytic_grads();
  GradMap<T> fd = finite_diff_grad<T>(loss, params, eps);
  for (const auto& [name, tensor] : params) {
    GradCheckRow row;
    row.name = name;
    auto ai = analytic.find(name);
    auto fi = fd.find(name);
    if (ai == analytic.end()) {
      row.pass = false;
      row.max_rel_err = std::numeric_limits<double>::infinity();
    } else {
      for (std::int64_t i = 0; i < tensor->size(); ++i) {
        const double e =
            grad_rel_err(static_cast<double>(ai->second[i]), static_cast<double>(fi->second[i]));
        row.max_rel_err = std::max(row.max_rel_err, e);
      }
      row.pass = row.max_rel_err < tol;
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

namespace checks {

// Moves values inside (-margin, margin) out to ±margin so finite differences
// never straddle an activation kink.
template <typename T>
void nudge_from_zero(Tensor<T>& x, T margin = T(1e-2)) {
  for (auto& v : x.data)
    if (v > -margin && v < margin) v = v >= T(0) ? margin : -margin;
}

template <typename T>
Tensor<T> random_tensor(const Shape& shape, Rng& rng, T lo = T(-1), T hi = T(1)) {
  Tensor<T> x(shape);
  for (auto& v : x.data) v = static_cast<T>(rng.uniform(static_cast<double>(lo), static_cast<double>(hi)));
  return x;
}

// Shared harness: binds the named tensors as tape leaves, runs the builder to
// an output node, projects onto fixed random weights, and compares analytic
// and finite-difference gradients of the resulting scalar.
template <typename T>
GradCheckReport check_traced(const std::string& what,
                             std::vector<std::pair<std::string, Tensor<T>*>> params,
                             const std::function<int(Tape<T>&, const std::vector<int>&)>& build,
                             Rng& rng, double tol = 1e-4, T eps = T(1e-5)) {
  auto trace = [&](bool want_grads, const Tensor<T>* projection, GradMap<T>* grads) {
    Tape<T> tape;
    std::vector<int> ids;
    ids.reserve(params.size());
    for (auto& [name, tensor] : params) ids.push_back(tape.leaf(*tensor, name));
    const int out = build(tape, ids);
    if (!projection) return std::pair<T, Shape>(T(0), tape.value(out).shape);
    const int proj = ad::weighted_sum(tape, out, *projection);
    const T value = tape.value(proj)[0];
    if (want_grads) {
      tape.backward(proj, Tensor<T>::scalar(T(1)));
      for (size_t i = 0; i < params.size(); ++i) {
        const Tensor<T>* g = tape.grad(ids[i]);
        grads->emplace(params[i].first, g ? *g : Tensor<T>(params[i].second->shape));
      }
    }
    return std::pair<T, Shape>(value, Shape{});
  };
  const Shape out_shape = trace(false, nullptr, nullptr).second;
  const Tensor<T> projection = random_tensor<T>(out_shape, rng);
  auto loss = [&]() { return trace(false, &projection, nullptr).first; };
  auto analytic = [&]() {
    GradMap<T> g;
    trace(true, &projection, &g);
    return g;
  };
  return gradcheck<T>(what, params, loss, analytic, tol, eps);
}

// Gradient checks for every tensor-level op, each on a tiny random case.
inline std::vector<GradCheckReport> core_op_checks(std::uint64_t seed = 7, double tol = 1e-4) {
  using T = double;
  std::vector<GradCheckReport> reports;
  Rng rng(seed);

  auto run = [&](const std::string& what, std::vector<std::pair<std::string, Tensor<T>*>> params,
                 std::function<int(Tape<T>&, const std::vector<int>&)> build) {
    reports.push_back(check_traced<T>(what, std::move(params), build, rng, tol));
  };

  {  // standard conv, stride 1, same padding, with bias
    Tensor<T> x = random_tensor<T>({5, 5, 3}, rng), w = random_tensor<T>({3, 3, 3, 4}, rng);
    Tensor<T> b = random_tensor<T>({4}, rng);
    run("conv2d_s1_same", {{"x", &x}, {"w", &w}, {"b", &b}},
        [](Tape<T>& t, const std::vector<int>& id) {
          return ad::conv(t, id[0], id[1], id[2], KernelKind::standard, 1, Padding::same);
        });
  }
  {  // standard conv, stride 2, valid padding, no bias
    Tensor<T> x = random_tensor<T>({7, 7, 2}, rng), w = random_tensor<T>({3, 3, 2, 3}, rng);
    run("conv2d_s2_valid", {{"x", &x}, {"w", &w}},
        [](Tape<T>& t, const std::vector<int>& id) {
          return ad::conv(t, id[0], id[1], -1, KernelKind::standard, 2, Padding::valid);
        });
  }
  {  // standard conv applied across a time sequence
    Tensor<T> x = random_tensor<T>({3, 5, 5, 2}, rng), w = random_tensor<T>({3, 3, 2, 3}, rng);
    Tensor<T> b = random_tensor<T>({3}, rng);
    run("conv2d_seq", {{"x", &x}, {"w", &w}, {"b", &b}},
        [](Tape<T>& t, const std::vector<int>& id) {
          return ad::conv(t, id[0], id[1], id[2], KernelKind::standard, 1, Padding::same);
        });
  }
  {  // depthwise conv, stride 1 and stride 2
    Tensor<T> x = random_tensor<T>({6, 6, 3}, rng), w = random_tensor<T>({3, 3, 3}, rng);
    Tensor<T> b = random_tensor<T>({3}, rng);
    run("depthwise_s1", {{"x", &x}, {"w", &w}, {"b", &b}},
        [](Tape<T>& t, const std::vector<int>& id) {
          return ad::conv(t, id[0], id[1], id[2], KernelKind::depthwise, 1, Padding::same);
        });
    Tensor<T> x2 = random_tensor<T>({7, 7, 2}, rng), w2 = random_tensor<T>({3, 3, 2}, rng);
    run("depthwise_s2", {{"x", &x2}, {"w", &w2}},
        [](Tape<T>& t, const std::vector<int>& id) {
          return ad::conv(t, id[0], id[1], -1, KernelKind::depthwise, 2, Padding::same);
        });
  }
  {  // pointwise conv
    Tensor<T> x = random_tensor<T>({4, 4, 3}, rng), w = random_tensor<T>({3, 5}, rng);
    Tensor<T> b = random_tensor<T>({5}, rng);
    run("pointwise", {{"x", &x}, {"w", &w}, {"b", &b}},
        [](Tape<T>& t, const std::vector<int>& id) {
          return ad::conv(t, id[0], id[1], id[2], KernelKind::pointwise, 1, Padding::same);
        });
  }
  {  // depthwise followed by pointwise (separable conv as composed on tape)
    Tensor<T> x = random_tensor<T>({5, 5, 3}, rng), dw = random_tensor<T>({3, 3, 3}, rng);
    Tensor<T> pw = random_tensor<T>({3, 4}, rng), b = random_tensor<T>({4}, rng);
    run("separable", {{"x", &x}, {"dw", &dw}, {"pw", &pw}, {"b", &b}},
        [](Tape<T>& t, const std::vector<int>& id) {
          const int mid = ad::conv(t, id[0], id[1], -1, KernelKind::depthwise, 1, Padding::same);
          return ad::conv(t, mid, id[2], id[3], KernelKind::pointwise, 1, Padding::same);
        });
  }
  {  // per-channel bias broadcast
    Tensor<T> x = random_tensor<T>({4, 3, 2}, rng), b = random_tensor<T>({2}, rng);
    run("add_bias", {{"x", &x}, {"b", &b}}, [](Tape<T>& t, const std::vector<int>& id) {
      return ad::add_bias(t, id[0], id[1]);
    });
  }
  {  // activations; leaky/relu6 inputs nudged away from their kinks
    Tensor<T> xs = random_tensor<T>({3, 3, 2}, rng);
    run("sigmoid", {{"x", &xs}}, [](Tape<T>& t, const std::vector<int>& id) {
      return ad::activation(t, id[0], Act::sigmoid);
    });
    Tensor<T> xt = random_tensor<T>({3, 3, 2}, rng);
    run("tanh", {{"x", &xt}}, [](Tape<T>& t, const std::vector<int>& id) {
      return ad::activation(t, id[0], Act::tanh);
    });
    Tensor<T> xl = random_tensor<T>({3, 3, 2}, rng);
    nudge_from_zero(xl);
    run("leaky_relu", {{"x", &xl}}, [](Tape<T>& t, const std::vector<int>& id) {
      return ad::activation(t, id[0], Act::leaky_relu, T(0.1));
    });
    Tensor<T> xr = random_tensor<T>({3, 3, 2}, rng, T(-2), T(5.9));
    nudge_from_zero(xr);
    run("relu6", {{"x", &xr}}, [](Tape<T>& t, const std::vector<int>& id) {
      return ad::activation(t, id[0], Act::relu6);
    });
  }
  {  // elementwise arithmetic
    Tensor<T> a = random_tensor<T>({3, 4, 2}, rng), b = random_tensor<T>({3, 4, 2}, rng);
    run("add", {{"a", &a}, {"b", &b}},
        [](Tape<T>& t, const std::vector<int>& id) { return ad::add(t, id[0], id[1]); });
    run("sub", {{"a", &a}, {"b", &b}},
        [](Tape<T>& t, const std::vector<int>& id) { return ad::sub(t, id[0], id[1]); });
    run("hadamard", {{"a", &a}, {"b", &b}},
        [](Tape<T>& t, const std::vector<int>& id) { return ad::hadamard(t, id[0], id[1]); });
    Tensor<T> c = random_tensor<T>({3, 4, 2}, rng);
    nudge_from_zero(c);
    run("abs", {{"x", &c}}, [](Tape<T>& t, const std::vector<int>& id) { return ad::abs(t, id[0]); });
  }
  {  // channel concatenation
    Tensor<T> a = random_tensor<T>({3, 3, 2}, rng), b = random_tensor<T>({3, 3, 3}, rng);
    run("concat_channels", {{"a", &a}, {"b", &b}}, [](Tape<T>& t, const std::vector<int>& id) {
      return ad::concat_channels(t, id[0], id[1]);
    });
  }
  {  // max pooling (distinct random values, so the argmax is FD-stable)
    Tensor<T> x = random_tensor<T>({6, 6, 2}, rng);
    run("maxpool2d", {{"x", &x}}, [](Tape<T>& t, const std::vector<int>& id) {
      return ad::maxpool2d(t, id[0], 2);
    });
  }
  {  // batchnorm in both modes
    Tensor<T> x = random_tensor<T>({4, 4, 3}, rng);
    Tensor<T> gamma = random_tensor<T>({3}, rng, T(0.5), T(1.5));
    Tensor<T> beta = random_tensor<T>({3}, rng);
    Tensor<T> mean = random_tensor<T>({3}, rng);
    Tensor<T> var = random_tensor<T>({3}, rng, T(0.5), T(2));
    run("batchnorm_infer", {{"x", &x}, {"gamma", &gamma}, {"beta", &beta}},
        [mean, var](Tape<T>& t, const std::vector<int>& id) {
          return ad::batchnorm_infer(t, id[0], id[1], id[2], mean, var, T(1e-3));
        });
    run("batchnorm_train", {{"x", &x}, {"gamma", &gamma}, {"beta", &beta}},
        [](Tape<T>& t, const std::vector<int>& id) {
          return ad::batchnorm_train(t, id[0], id[1], id[2], T(1e-3));
        });
    Tensor<T> xseq = random_tensor<T>({3, 4, 4, 2}, rng);
    Tensor<T> g2 = random_tensor<T>({2}, rng, T(0.5), T(1.5)), b2 = random_tensor<T>({2}, rng);
    run("batchnorm_train_seq", {{"x", &xseq}, {"gamma", &g2}, {"beta", &b2}},
        [](Tape<T>& t, const std::vector<int>& id) {
          return ad::batchnorm_train(t, id[0], id[1], id[2], T(1e-3));
        });
  }
  {  // sequence indexing and reshaping
    Tensor<T> x = random_tensor<T>({4, 3, 3, 2}, rng);
    run("slice_time", {{"x", &x}}, [](Tape<T>& t, const std::vector<int>& id) {
      return ad::slice_time(t, id[0], 2);
    });
    Tensor<T> sa = random_tensor<T>({2, 3, 3, 2}, rng), sb = random_tensor<T>({3, 3, 3, 2}, rng);
    run("concat_time", {{"a", &sa}, {"b", &sb}}, [](Tape<T>& t, const std::vector<int>& id) {
      return ad::concat_time(t, std::vector<int>{id[0], id[1]});
    });
    Tensor<T> sr = random_tensor<T>({5, 3, 3, 2}, rng);
    run("slice_time_range", {{"x", &sr}}, [](Tape<T>& t, const std::vector<int>& id) {
      return ad::slice_time_range(t, id[0], 1, 3);
    });
    Tensor<T> y = random_tensor<T>({3, 4, 2}, rng);
    run("flatten", {{"x", &y}},
        [](Tape<T>& t, const std::vector<int>& id) { return ad::flatten(t, id[0]); });
  }
  {  // dense layer
    Tensor<T> x = random_tensor<T>({6}, rng), w = random_tensor<T>({6, 4}, rng);
    Tensor<T> b = random_tensor<T>({4}, rng);
    run("dense", {{"x", &x}, {"w", &w}, {"b", &b}}, [](Tape<T>& t, const std::vector<int>& id) {
      return ad::dense(t, id[0], id[1], id[2]);
    });
  }
  {  // reductions and scaling
    Tensor<T> x = random_tensor<T>({3, 4, 2}, rng);
    run("sum", {{"x", &x}},
        [](Tape<T>& t, const std::vector<int>& id) { return ad::sum(t, id[0]); });
    run("scale", {{"x", &x}},
        [](Tape<T>& t, const std::vector<int>& id) { return ad::scale(t, id[0], T(0.37)); });
  }
  {  // binary cross-entropy from a logit, both labels
    Tensor<T> z0 = random_tensor<T>({1}, rng, T(-3), T(3));
    run("bce_logit_y0", {{"z", &z0}}, [](Tape<T>& t, const std::vector<int>& id) {
      return ad::bce_with_logits(t, id[0], T(0));
    });
    Tensor<T> z1 = random_tensor<T>({1}, rng, T(-3), T(3));
    run("bce_logit_y1", {{"z", &z1}}, [](Tape<T>& t, const std::vector<int>& id) {
      return ad::bce_with_logits(t, id[0], T(1));
    });
  }
  return reports;
}

}  // namespace checks
}  // namespace scl
