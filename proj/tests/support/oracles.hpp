#pragma once
// Reference implementations used to check the library. Written for clarity,
// not speed; they share no code with the library beyond its data types.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "das/random.hpp"
#include "das/srnet.hpp"

namespace oracle {

struct Volume {
  std::size_t c = 0, h = 0, w = 0;
  std::vector<double> v;
  Volume() = default;
  Volume(std::size_t c_, std::size_t h_, std::size_t w_) : c(c_), h(h_), w(w_), v(c_ * h_ * w_, 0.0) {}
  double& at(std::size_t ci, std::size_t y, std::size_t x) { return v[(ci * h + y) * w + x]; }
  double at(std::size_t ci, std::size_t y, std::size_t x) const { return v[(ci * h + y) * w + x]; }
};

/// `pattern`, when given, receives the on/off state of every ReLU unit.
inline Volume conv_relu(const Volume& in, const das::ModelParams& p, const std::string& name, std::size_t k,
                        std::size_t stride, std::vector<bool>* pattern = nullptr) {
  const auto w = p.tensor(name + ".w");
  const auto b = p.tensor(name + ".b");
  const std::size_t cout = b.size();
  const long pad = static_cast<long>(k / 2);
  const std::size_t oh = (in.h + 2 * (k / 2) - k) / stride + 1;
  const std::size_t ow = (in.w + 2 * (k / 2) - k) / stride + 1;
  Volume out(cout, oh, ow);
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        double s = b[co];
        for (std::size_t ci = 0; ci < in.c; ++ci)
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
              const long iy = static_cast<long>(y * stride + ky) - pad;
              const long ix = static_cast<long>(x * stride + kx) - pad;
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(in.h) || ix >= static_cast<long>(in.w)) continue;
              s += w[((co * in.c + ci) * k + ky) * k + kx] * in.at(ci, iy, ix);
            }
        out.at(co, y, x) = std::max(s, 0.0);
        if (pattern) pattern->push_back(s > 0.0);
      }
  return out;
}

/// Direct nested-loop evaluation of the classifier's logit. With
/// `skip_blocks` the residual blocks are left out entirely.
inline double forward_logit(const das::ModelParams& p, const das::PhaseWindow& x, bool skip_blocks = false,
                            std::vector<bool>* pattern = nullptr) {
  const auto& a = p.arch();
  Volume v(1, a.input_rows / a.pool_rows, a.input_cols / a.pool_cols);
  for (std::size_t r = 0; r < a.input_rows; ++r)
    for (std::size_t c = 0; c < a.input_cols; ++c) v.at(0, r / a.pool_rows, c / a.pool_cols) += x.at(r, c);
  for (auto& e : v.v) e /= static_cast<double>(a.pool_rows * a.pool_cols);

  v = conv_relu(v, p, "stem", a.kernel, a.stem_stride, pattern);
  for (std::size_t s = 0; s < a.stages.size(); ++s) {
    const auto& st = a.stages[s];
    if (s > 0 || st.channels != v.c) {
      const bool pool = s > 0;
      Volume t(st.channels, pool ? v.h / 2 : v.h, pool ? v.w / 2 : v.w);
      for (std::size_t c = 0; c < v.c; ++c)
        for (std::size_t y = 0; y < t.h; ++y)
          for (std::size_t xx = 0; xx < t.w; ++xx)
            t.at(c, y, xx) = pool ? 0.25 * (v.at(c, 2 * y, 2 * xx) + v.at(c, 2 * y, 2 * xx + 1) +
                                            v.at(c, 2 * y + 1, 2 * xx) + v.at(c, 2 * y + 1, 2 * xx + 1))
                                  : v.at(c, y, xx);
      v = std::move(t);
    }
    if (skip_blocks) continue;
    for (std::size_t b = 0; b < st.blocks; ++b) {
      const std::string prefix = "stage" + std::to_string(s) + ".block" + std::to_string(b) + ".conv";
      Volume u = v;
      for (int j = 1; j <= 4; ++j) u = conv_relu(u, p, prefix + std::to_string(j), a.kernel, 1, pattern);
      for (std::size_t i = 0; i < v.v.size(); ++i) v.v[i] += u.v[i];
    }
  }
  const auto hw = p.tensor("head.w");
  double z = p.tensor("head.b")[0];
  for (std::size_t c = 0; c < v.c; ++c) {
    double m = 0.0;
    for (std::size_t i = 0; i < v.h * v.w; ++i) m += v.v[c * v.h * v.w + i];
    z += hw[c] * m / static_cast<double>(v.h * v.w);
  }
  return z;
}

/// Binary cross-entropy evaluated straight from its definition.
inline double bce(double p, int y) {
  p = std::min(std::max(p, 1e-7), 1.0 - 1e-7);
  return -(y * std::log(p) + (1 - y) * std::log(1.0 - p));
}

/// Element-wise mean accumulated in long double (at least 64-bit mantissa here).
inline std::vector<double> extended_mean(const std::vector<std::vector<double>>& vs) {
  std::vector<double> out(vs.front().size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    long double s = 0.0L;
    for (const auto& v : vs) s += static_cast<long double>(v[i]);
    out[i] = static_cast<double>(s / static_cast<long double>(vs.size()));
  }
  return out;
}

struct GradCheck {
  std::size_t checked = 0;
  std::size_t skipped = 0;  // probes that crossed a ReLU kink
  double max_rel_error = 0.0;
};

/// Central differences of the training objective at `coords` parameters
/// drawn at random, against the analytic gradient. The objective is only
/// piecewise smooth, so a coordinate whose +-step flips any ReLU unit is
/// replaced by another draw.
inline GradCheck finite_difference_check(const das::ModelParams& params, const das::PhaseWindow& x,
                                         std::uint8_t label, std::size_t coords, double step, std::uint64_t seed) {
  const auto g = das::backward(params, x, label);
  das::Rng rng(seed);
  GradCheck out;
  das::ModelParams probe = params;
  auto values = probe.values();
  std::vector<bool> base, up_pattern, down_pattern;
  forward_logit(params, x, false, &base);
  while (out.checked < coords) {
    const std::size_t i = rng.below(values.size());
    const double keep = values[i];
    up_pattern.clear();
    down_pattern.clear();
    values[i] = keep + step;
    const double up = das::logit_loss(forward_logit(probe, x, false, &up_pattern), label);
    values[i] = keep - step;
    const double down = das::logit_loss(forward_logit(probe, x, false, &down_pattern), label);
    values[i] = keep;
    if (up_pattern != base || down_pattern != base) {
      ++out.skipped;
      continue;
    }
    const double numeric = (up - down) / (2.0 * step);
    const double analytic = g.gradient.values()[i];
    const double scale = std::max({std::fabs(numeric), std::fabs(analytic), 1e-8});
    out.max_rel_error = std::max(out.max_rel_error, std::fabs(numeric - analytic) / scale);
    ++out.checked;
  }
  return out;
}

/// Random window with unit-scale entries.
inline das::PhaseWindow random_window(std::uint64_t seed, std::size_t rows = das::kWindowRows,
                                      std::size_t cols = das::kWindowCols) {
  das::Rng rng(seed);
  das::PhaseWindow w(rows, cols);
  for (auto& v : w.data) v = static_cast<float>(rng.normal());
  return w;
}

/// He-initialized network with small random biases so every path is active.
inline das::ModelParams random_network(const das::ArchitectureConfig& arch, std::uint64_t seed) {
  auto p = das::init_params(arch, seed);
  das::Rng rng(seed ^ 0xb1a5);
  for (std::size_t t = 0; t < p.tensors().size(); ++t) {
    const auto& spec = p.tensors()[t];
    if (spec.shape.size() == 1)
      for (auto& v : p.tensor(t)) v = 0.05 * rng.normal();
  }
  return p;
}

}  // namespace oracle
