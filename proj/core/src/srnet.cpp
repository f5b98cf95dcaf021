#include "das/srnet.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "das/error.hpp"
#include "das/random.hpp"

namespace das {

// ---------------------------------------------------------------------------
// Architecture

std::size_t ArchitectureConfig::block_count() const {
  std::size_t n = 0;
  for (const auto& s : stages) n += s.blocks;
  return n;
}

void ArchitectureConfig::validate() const {
  require(input_rows > 0 && input_cols > 0, ErrorCode::InvalidArgument, "architecture input must be non-empty");
  require(pool_rows > 0 && pool_cols > 0 && input_rows % pool_rows == 0 && input_cols % pool_cols == 0,
          ErrorCode::InvalidArgument, "input pooling must divide the input shape");
  require(stem_channels > 0 && stem_stride > 0, ErrorCode::InvalidArgument, "bad stem");
  require(kernel % 2 == 1, ErrorCode::InvalidArgument, "kernel size must be odd");
  require(!stages.empty(), ErrorCode::InvalidArgument, "architecture needs at least one stage");
  std::size_t prev = stem_channels;
  for (const auto& s : stages) {
    require(s.channels >= prev, ErrorCode::InvalidArgument, "stage widths must be non-decreasing");
    prev = s.channels;
  }
}

std::string ArchitectureConfig::describe() const {
  std::ostringstream os;
  os << "srnet-arch v1\n";
  os << "name " << name << "\n";
  os << "input " << input_rows << " " << input_cols << "\n";
  os << "pool " << pool_rows << " " << pool_cols << "\n";
  os << "stem " << stem_channels << " " << stem_stride << "\n";
  os << "kernel " << kernel << "\n";
  os << "stages";
  for (const auto& s : stages) os << " " << s.channels << "x" << s.blocks;
  os << "\n";
  os << "trainable_layers " << trainable_layers() << "\n";
  return os.str();
}

ArchitectureConfig ArchitectureConfig::parse(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  require(line == "srnet-arch v1", ErrorCode::Format, "unknown architecture descriptor header '" + line + "'");
  ArchitectureConfig a;
  a.stages.clear();
  std::size_t declared_layers = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "name") {
      ls >> a.name;
    } else if (key == "input") {
      ls >> a.input_rows >> a.input_cols;
    } else if (key == "pool") {
      ls >> a.pool_rows >> a.pool_cols;
    } else if (key == "stem") {
      ls >> a.stem_channels >> a.stem_stride;
    } else if (key == "kernel") {
      ls >> a.kernel;
    } else if (key == "stages") {
      std::string tok;
      while (ls >> tok) {
        const auto x = tok.find('x');
        require(x != std::string::npos, ErrorCode::Format, "bad stage token '" + tok + "'");
        a.stages.push_back({std::stoul(tok.substr(0, x)), std::stoul(tok.substr(x + 1))});
      }
      ls.clear();  // the token loop ends on end-of-line
    } else if (key == "trainable_layers") {
      ls >> declared_layers;
    } else {
      throw Error(ErrorCode::Format, "unknown architecture key '" + key + "'");
    }
    require(!ls.fail(), ErrorCode::Format, "malformed architecture line '" + line + "'");
  }
  a.validate();
  require(declared_layers == 0 || declared_layers == a.trainable_layers(), ErrorCode::Format,
          "declared layer count disagrees with stages");
  return a;
}

ArchitectureConfig ArchitectureConfig::desk() { return ArchitectureConfig{}; }

ArchitectureConfig ArchitectureConfig::paper() {
  ArchitectureConfig a;
  a.name = "paper";
  a.stages = {{8, 2}, {16, 2}, {32, 2}};
  return a;
}

// ---------------------------------------------------------------------------
// Execution plan

namespace {

struct Shape3 {
  std::size_t c = 0, h = 0, w = 0;
  std::size_t size() const { return c * h * w; }
};

struct ConvGeom {
  std::size_t k = 3, stride = 1, pad = 1;
};

enum class OpKind { ConvRelu, Transition, Add };

struct Op {
  OpKind kind;
  std::size_t src = 0, src2 = 0, dst = 0;
  ConvGeom geom{};
  std::size_t weight = 0, bias = 0;  // tensor indices
  bool pool = false;                 // transitions only
};

struct Plan {
  std::vector<Shape3> shapes;  // activation shapes; 0 is the pooled input
  std::vector<Op> ops;
  std::size_t head_weight = 0, head_bias = 0;
};

std::size_t conv_out(std::size_t in, const ConvGeom& g) { return (in + 2 * g.pad - g.k) / g.stride + 1; }

struct LayoutBuilder {
  std::vector<TensorSpec> tensors;
  std::size_t total = 0;
  std::size_t add(std::string name, std::vector<std::size_t> shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    tensors.push_back({std::move(name), std::move(shape), total, n});
    total += n;
    return tensors.size() - 1;
  }
};

Plan build_plan(const ArchitectureConfig& a, LayoutBuilder* layout) {
  a.validate();
  Plan plan;
  LayoutBuilder local;
  LayoutBuilder& L = layout ? *layout : local;

  plan.shapes.push_back({1, a.input_rows / a.pool_rows, a.input_cols / a.pool_cols});

  const ConvGeom stem{a.kernel, a.stem_stride, a.kernel / 2};
  const ConvGeom body{a.kernel, 1, a.kernel / 2};

  auto conv = [&](std::size_t src, std::size_t cout, const ConvGeom& g, const std::string& name) {
    const Shape3 in = plan.shapes[src];
    Op op{OpKind::ConvRelu};
    op.src = src;
    op.geom = g;
    op.weight = L.add(name + ".w", {cout, in.c, g.k, g.k});
    op.bias = L.add(name + ".b", {cout});
    plan.shapes.push_back({cout, conv_out(in.h, g), conv_out(in.w, g)});
    op.dst = plan.shapes.size() - 1;
    plan.ops.push_back(op);
    return op.dst;
  };

  std::size_t cur = conv(0, a.stem_channels, stem, "stem");
  for (std::size_t s = 0; s < a.stages.size(); ++s) {
    const auto& stage = a.stages[s];
    const Shape3 in = plan.shapes[cur];
    const bool pool = s > 0;
    if (pool || stage.channels != in.c) {
      Op op{OpKind::Transition};
      op.src = cur;
      op.pool = pool;
      plan.shapes.push_back({stage.channels, pool ? in.h / 2 : in.h, pool ? in.w / 2 : in.w});
      require(plan.shapes.back().h > 0 && plan.shapes.back().w > 0, ErrorCode::InvalidArgument,
              "too many transitions for the input size");
      op.dst = plan.shapes.size() - 1;
      plan.ops.push_back(op);
      cur = op.dst;
    }
    for (std::size_t b = 0; b < stage.blocks; ++b) {
      const std::size_t block_in = cur;
      const std::string prefix = "stage" + std::to_string(s) + ".block" + std::to_string(b);
      for (int j = 1; j <= 4; ++j) cur = conv(cur, stage.channels, body, prefix + ".conv" + std::to_string(j));
      Op add{OpKind::Add};
      add.src = cur;
      add.src2 = block_in;
      plan.shapes.push_back(plan.shapes[block_in]);
      add.dst = plan.shapes.size() - 1;
      plan.ops.push_back(add);
      cur = add.dst;
    }
  }
  const std::size_t channels = plan.shapes[cur].c;
  plan.head_weight = L.add("head.w", {channels});
  plan.head_bias = L.add("head.b", {1});
  return plan;
}

// ---------------------------------------------------------------------------
// Kernels

struct Range {
  std::size_t lo, hi;  // [lo, hi)
};

/// Output positions o for which o * stride + k - pad lies in [0, in).
Range valid_outputs(std::size_t out, std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  const long long kk = static_cast<long long>(k) - static_cast<long long>(pad);
  const long long s = static_cast<long long>(stride);
  long long lo = kk >= 0 ? 0 : (-kk + s - 1) / s;
  long long hi = (static_cast<long long>(in) - 1 - kk);
  hi = hi < 0 ? -1 : hi / s;
  lo = std::max<long long>(lo, 0);
  hi = std::min<long long>(hi, static_cast<long long>(out) - 1);
  if (hi < lo) return {0, 0};
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi) + 1};
}

void conv_relu_forward(const double* in, Shape3 is, const double* w, const double* b, const ConvGeom& g,
                       double* out, Shape3 os) {
  const std::size_t plane = os.h * os.w;
  for (std::size_t co = 0; co < os.c; ++co) {
    double* o = out + co * plane;
    std::fill(o, o + plane, b[co]);
    for (std::size_t ci = 0; ci < is.c; ++ci) {
      const double* ip = in + ci * is.h * is.w;
      for (std::size_t ky = 0; ky < g.k; ++ky) {
        const Range ry = valid_outputs(os.h, is.h, ky, g.stride, g.pad);
        for (std::size_t kx = 0; kx < g.k; ++kx) {
          const Range rx = valid_outputs(os.w, is.w, kx, g.stride, g.pad);
          const double wv = w[((co * is.c + ci) * g.k + ky) * g.k + kx];
          for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
            const double* irow = ip + (oy * g.stride + ky - g.pad) * is.w;
            double* orow = o + oy * os.w;
            if (g.stride == 1) {
              const double* src = irow + kx - g.pad;
              for (std::size_t ox = rx.lo; ox < rx.hi; ++ox) orow[ox] += wv * src[ox];
            } else {
              for (std::size_t ox = rx.lo; ox < rx.hi; ++ox) orow[ox] += wv * irow[ox * g.stride + kx - g.pad];
            }
          }
        }
      }
    }
    for (std::size_t i = 0; i < plane; ++i) o[i] = o[i] > 0.0 ? o[i] : 0.0;
  }
}

/// `gout` holds d(loss)/d(post-activation); it is masked in place.
void conv_relu_backward(const double* in, Shape3 is, const double* w, const ConvGeom& g, const double* out,
                        double* gout, Shape3 os, double* gin, double* gw, double* gb) {
  const std::size_t plane = os.h * os.w;
  for (std::size_t i = 0; i < os.size(); ++i)
    if (!(out[i] > 0.0)) gout[i] = 0.0;
  for (std::size_t co = 0; co < os.c; ++co) {
    const double* go = gout + co * plane;
    double bsum = 0.0;
    for (std::size_t i = 0; i < plane; ++i) bsum += go[i];
    gb[co] += bsum;
    for (std::size_t ci = 0; ci < is.c; ++ci) {
      const double* ip = in + ci * is.h * is.w;
      double* gp = gin ? gin + ci * is.h * is.w : nullptr;
      for (std::size_t ky = 0; ky < g.k; ++ky) {
        const Range ry = valid_outputs(os.h, is.h, ky, g.stride, g.pad);
        for (std::size_t kx = 0; kx < g.k; ++kx) {
          const Range rx = valid_outputs(os.w, is.w, kx, g.stride, g.pad);
          const std::size_t widx = ((co * is.c + ci) * g.k + ky) * g.k + kx;
          const double wv = w[widx];
          double acc = 0.0;
          for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
            const std::size_t iy = oy * g.stride + ky - g.pad;
            const double* irow = ip + iy * is.w;
            const double* grow = go + oy * os.w;
            if (g.stride == 1) {
              const double* src = irow + kx - g.pad;
              double row_acc = 0.0;
#pragma omp simd reduction(+ : row_acc)
              for (std::size_t ox = rx.lo; ox < rx.hi; ++ox) row_acc += grow[ox] * src[ox];
              acc += row_acc;
              if (gp) {
                double* dst = gp + iy * is.w + kx - g.pad;
                for (std::size_t ox = rx.lo; ox < rx.hi; ++ox) dst[ox] += wv * grow[ox];
              }
            } else {
              for (std::size_t ox = rx.lo; ox < rx.hi; ++ox) {
                const std::size_t ix = ox * g.stride + kx - g.pad;
                acc += grow[ox] * irow[ix];
                if (gp) gp[iy * is.w + ix] += wv * grow[ox];
              }
            }
          }
          gw[widx] += acc;
        }
      }
    }
  }
}

void transition_forward(const double* in, Shape3 is, double* out, Shape3 os, bool pool) {
  std::fill(out, out + os.size(), 0.0);
  for (std::size_t c = 0; c < is.c; ++c) {
    for (std::size_t y = 0; y < os.h; ++y) {
      for (std::size_t x = 0; x < os.w; ++x) {
        double v;
        if (pool) {
          const double* p = in + (c * is.h + 2 * y) * is.w + 2 * x;
          v = 0.25 * (p[0] + p[1] + p[is.w] + p[is.w + 1]);
        } else {
          v = in[(c * is.h + y) * is.w + x];
        }
        out[(c * os.h + y) * os.w + x] = v;
      }
    }
  }
}

void transition_backward(const double* gout, Shape3 os, double* gin, Shape3 is, bool pool) {
  for (std::size_t c = 0; c < is.c; ++c) {
    for (std::size_t y = 0; y < os.h; ++y) {
      for (std::size_t x = 0; x < os.w; ++x) {
        const double g = gout[(c * os.h + y) * os.w + x];
        if (pool) {
          double* p = gin + (c * is.h + 2 * y) * is.w + 2 * x;
          p[0] += 0.25 * g;
          p[1] += 0.25 * g;
          p[is.w] += 0.25 * g;
          p[is.w + 1] += 0.25 * g;
        } else {
          gin[(c * is.h + y) * is.w + x] += g;
        }
      }
    }
  }
}

struct Tape {
  Plan plan;
  std::vector<std::vector<double>> acts;
  std::vector<double> features;
  double logit = 0.0;
};

void pool_input(const ArchitectureConfig& a, const PhaseWindow& window, std::vector<double>& out) {
  require(window.rows == a.input_rows && window.cols == a.input_cols, ErrorCode::ShapeMismatch,
          "window is " + std::to_string(window.rows) + "x" + std::to_string(window.cols) + ", network expects " +
              std::to_string(a.input_rows) + "x" + std::to_string(a.input_cols));
  require(window.data.size() == window.rows * window.cols, ErrorCode::ShapeMismatch, "window storage size mismatch");
  const std::size_t oh = a.input_rows / a.pool_rows, ow = a.input_cols / a.pool_cols;
  const double inv = 1.0 / static_cast<double>(a.pool_rows * a.pool_cols);
  out.assign(oh * ow, 0.0);
  for (std::size_t r = 0; r < a.input_rows; ++r) {
    const float* src = window.data.data() + r * a.input_cols;
    double* dst = out.data() + (r / a.pool_rows) * ow;
    for (std::size_t c = 0; c < a.input_cols; ++c) dst[c / a.pool_cols] += static_cast<double>(src[c]);
  }
  for (double& v : out) v *= inv;
}

void run_forward(const ModelParams& params, const PhaseWindow& window, Tape& tape) {
  tape.plan = build_plan(params.arch(), nullptr);
  const Plan& plan = tape.plan;
  tape.acts.resize(plan.shapes.size());
  pool_input(params.arch(), window, tape.acts[0]);
  for (const Op& op : plan.ops) {
    auto& dst = tape.acts[op.dst];
    dst.resize(plan.shapes[op.dst].size());
    switch (op.kind) {
      case OpKind::ConvRelu:
        conv_relu_forward(tape.acts[op.src].data(), plan.shapes[op.src], params.tensor(op.weight).data(),
                          params.tensor(op.bias).data(), op.geom, dst.data(), plan.shapes[op.dst]);
        break;
      case OpKind::Transition:
        transition_forward(tape.acts[op.src].data(), plan.shapes[op.src], dst.data(), plan.shapes[op.dst], op.pool);
        break;
      case OpKind::Add: {
        const auto& a = tape.acts[op.src];
        const auto& b = tape.acts[op.src2];
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = a[i] + b[i];
        break;
      }
    }
  }
  const std::size_t last = plan.shapes.size() - 1;
  const Shape3 s = plan.shapes[last];
  const auto& act = tape.acts[last];
  tape.features.assign(s.c, 0.0);
  const double inv = 1.0 / static_cast<double>(s.h * s.w);
  for (std::size_t c = 0; c < s.c; ++c) {
    double sum = 0.0;
    for (std::size_t i = 0; i < s.h * s.w; ++i) sum += act[c * s.h * s.w + i];
    tape.features[c] = sum * inv;
  }
  const auto hw = params.tensor(plan.head_weight);
  double z = params.tensor(plan.head_bias)[0];
  for (std::size_t c = 0; c < s.c; ++c) z += hw[c] * tape.features[c];
  tape.logit = z;
}

/// Backpropagates d(loss)/d(logit) through a recorded tape into `grad`.
void run_backward(const ModelParams& params, Tape& tape, double dlogit, ModelParams& grad) {
  const Plan& plan = tape.plan;
  std::vector<std::vector<double>> g(plan.shapes.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i].assign(plan.shapes[i].size(), 0.0);

  const std::size_t last = plan.shapes.size() - 1;
  const Shape3 s = plan.shapes[last];
  const auto hw = params.tensor(plan.head_weight);
  auto ghw = grad.tensor(plan.head_weight);
  grad.tensor(plan.head_bias)[0] += dlogit;
  const double inv = 1.0 / static_cast<double>(s.h * s.w);
  for (std::size_t c = 0; c < s.c; ++c) {
    ghw[c] += dlogit * tape.features[c];
    const double v = dlogit * hw[c] * inv;
    for (std::size_t i = 0; i < s.h * s.w; ++i) g[last][c * s.h * s.w + i] = v;
  }

  for (auto it = plan.ops.rbegin(); it != plan.ops.rend(); ++it) {
    const Op& op = *it;
    switch (op.kind) {
      case OpKind::ConvRelu:
        conv_relu_backward(tape.acts[op.src].data(), plan.shapes[op.src], params.tensor(op.weight).data(), op.geom,
                           tape.acts[op.dst].data(), g[op.dst].data(), plan.shapes[op.dst],
                           op.src == 0 ? nullptr : g[op.src].data(), grad.tensor(op.weight).data(),
                           grad.tensor(op.bias).data());
        break;
      case OpKind::Transition:
        transition_backward(g[op.dst].data(), plan.shapes[op.dst], g[op.src].data(), plan.shapes[op.src], op.pool);
        break;
      case OpKind::Add:
        for (std::size_t i = 0; i < g[op.dst].size(); ++i) {
          g[op.src][i] += g[op.dst][i];
          g[op.src2][i] += g[op.dst][i];
        }
        break;
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Parameters

ModelParams::ModelParams(ArchitectureConfig arch) : arch_(std::move(arch)) {
  LayoutBuilder layout;
  build_plan(arch_, &layout);
  tensors_ = std::move(layout.tensors);
  values_.assign(layout.total, 0.0);
}

std::span<double> ModelParams::tensor(std::size_t index) {
  const auto& t = tensors_.at(index);
  return {values_.data() + t.offset, t.size};
}

std::span<const double> ModelParams::tensor(std::size_t index) const {
  const auto& t = tensors_.at(index);
  return {values_.data() + t.offset, t.size};
}

std::span<const double> ModelParams::tensor(const std::string& name) const {
  for (std::size_t i = 0; i < tensors_.size(); ++i)
    if (tensors_[i].name == name) return tensor(i);
  throw Error(ErrorCode::InvalidArgument, "no tensor named '" + name + "'");
}

ModelParams ModelParams::restore(const ArchitectureConfig& arch, std::span<const double> flat) {
  ModelParams p(arch);
  require(flat.size() == p.count(), ErrorCode::DescriptorMismatch,
          "parameter vector has " + std::to_string(flat.size()) + " values, architecture needs " +
              std::to_string(p.count()));
  std::copy(flat.begin(), flat.end(), p.values_.begin());
  return p;
}

ModelParams init_params(const ArchitectureConfig& arch, std::uint64_t seed) {
  ModelParams p(arch);
  Rng rng(mix_seed(seed, 0x1417));
  for (std::size_t i = 0; i < p.tensors().size(); ++i) {
    const auto& t = p.tensors()[i];
    if (t.shape.size() == 1 && t.name.ends_with(".b")) continue;
    const std::size_t fan_in = t.shape.size() == 4 ? t.shape[1] * t.shape[2] * t.shape[3] : t.shape[0];
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (double& v : p.tensor(i)) v = stddev * rng.normal();
  }
  return p;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {
constexpr const char* kCheckpointHeader = "srnet-checkpoint v1";
}

void write_checkpoint(std::ostream& out, const ModelParams& params) {
  out << kCheckpointHeader << "\n" << params.arch().describe() << "end\n";
  const std::uint64_t n = params.count();
  for (int i = 0; i < 8; ++i) out.put(static_cast<char>((n >> (8 * i)) & 0xff));
  for (double v : params.values()) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    for (int i = 0; i < 4; ++i) out.put(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
  require(out.good(), ErrorCode::Io, "failed writing checkpoint");
}

ModelParams read_checkpoint(std::istream& in) {
  std::string line;
  std::getline(in, line);
  require(line == kCheckpointHeader, ErrorCode::Format, "not a checkpoint: '" + line + "'");
  std::string desc;
  while (std::getline(in, line) && line != "end") desc += line + "\n";
  require(line == "end", ErrorCode::Format, "checkpoint descriptor not terminated");
  const ArchitectureConfig arch = ArchitectureConfig::parse(desc);

  unsigned char b8[8];
  in.read(reinterpret_cast<char*>(b8), 8);
  require(in.good(), ErrorCode::Format, "truncated checkpoint count");
  std::uint64_t n = 0;
  for (int i = 0; i < 8; ++i) n |= static_cast<std::uint64_t>(b8[i]) << (8 * i);
  std::vector<double> flat(n);
  for (auto& v : flat) {
    unsigned char b4[4];
    in.read(reinterpret_cast<char*>(b4), 4);
    require(in.good(), ErrorCode::Format, "truncated checkpoint values");
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(b4[i]) << (8 * i);
    v = static_cast<double>(std::bit_cast<float>(bits));
  }
  return ModelParams::restore(arch, flat);
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
  std::ofstream out(path, std::ios::binary);
  require(out.is_open(), ErrorCode::Io, "cannot open " + path.string() + " for writing");
  write_checkpoint(out, params);
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.is_open(), ErrorCode::Io, "cannot open " + path.string());
  return read_checkpoint(in);
}

std::string params_digest(const ModelParams& params) {
  std::ostringstream os;
  write_checkpoint(os, params);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : os.str()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Forward, loss, backward

double logistic(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double clamp_probability(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

double bce_loss(double probability, std::uint8_t label) {
  const double p = clamp_probability(probability);
  return label ? -std::log(p) : -std::log1p(-p);
}

double logit_loss(double z, std::uint8_t label) {
  const double m = label ? z : -z;  // margin toward the true class
  const double nll = std::max(-m, 0.0) + std::log1p(std::exp(-std::fabs(m)));
  return std::max(nll, -std::log1p(-kProbClamp));
}

namespace {

double logit_slope(double z, std::uint8_t label) {
  const double p = logistic(z);
  const double truth = label ? p : 1.0 - p;
  return truth > 1.0 - kProbClamp ? 0.0 : p - static_cast<double>(label);
}

}  // namespace

double forward_logit(const ModelParams& params, const PhaseWindow& window) {
  Tape tape;
  run_forward(params, window, tape);
  return tape.logit;
}

double forward(const ModelParams& params, const PhaseWindow& window) {
  return logistic(forward_logit(params, window));
}

std::uint8_t decide(double probability) { return probability >= 0.5 ? 1 : 0; }

std::uint8_t predict(const ModelParams& params, const PhaseWindow& window) {
  return decide(forward(params, window));
}

double accumulate_gradient(const ModelParams& params, const PhaseWindow& window, std::uint8_t label,
                           ModelParams& accum) {
  Tape tape;
  run_forward(params, window, tape);
  const double dlogit = logit_slope(tape.logit, label);
  if (dlogit != 0.0) run_backward(params, tape, dlogit, accum);
  return logit_loss(tape.logit, label);
}

GradientResult backward(const ModelParams& params, const PhaseWindow& window, std::uint8_t label) {
  GradientResult r{ModelParams(params.arch())};
  Tape tape;
  run_forward(params, window, tape);
  r.probability = logistic(tape.logit);
  r.loss = logit_loss(tape.logit, label);
  const double dlogit = logit_slope(tape.logit, label);
  if (dlogit != 0.0) run_backward(params, tape, dlogit, r.gradient);
  return r;
}

// ---------------------------------------------------------------------------
// Optimization

void TrainConfig::validate() const {
  require(learning_rate >= 0.0, ErrorCode::InvalidArgument, "learning rate must be >= 0");
  require(batch_size >= 1, ErrorCode::InvalidArgument, "batch size must be >= 1");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, ErrorCode::InvalidArgument,
          "Adam moment decays must be in [0, 1)");
  require(epsilon > 0.0, ErrorCode::InvalidArgument, "Adam epsilon must be > 0");
}

Adam::Adam(const TrainConfig& config, std::size_t count)
    : lr_(config.learning_rate),
      beta1_(config.beta1),
      beta2_(config.beta2),
      eps_(config.epsilon),
      m_(count, 0.0),
      v_(count, 0.0) {}

void Adam::step(ModelParams& params, const ModelParams& gradient) {
  require(gradient.count() == m_.size() && params.count() == m_.size(), ErrorCode::DescriptorMismatch,
          "Adam state does not match parameters");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  auto p = params.values();
  auto g = gradient.values();
  for (std::size_t i = 0; i < m_.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g[i] * g[i];
    const double mhat = m_[i] / c1;
    const double vhat = v_[i] / c2;
    p[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
  }
}

namespace {

struct BatchStats {
  double loss_sum = 0.0;
  std::size_t correct = 0;
};

ModelParams batch_gradient_impl(const ModelParams& params, const SampleSet& data,
                                std::span<const std::size_t> batch, BatchStats& stats) {
  std::vector<std::size_t> order(batch.begin(), batch.end());
  std::sort(order.begin(), order.end());
  ModelParams grad(params.arch());
  for (std::size_t idx : order) {
    const LabeledSample& s = data[idx];
    Tape tape;
    run_forward(params, s.window, tape);
    stats.loss_sum += logit_loss(tape.logit, s.label);
    stats.correct += decide(logistic(tape.logit)) == s.label ? 1 : 0;
    const double dlogit = logit_slope(tape.logit, s.label);
    if (dlogit != 0.0) run_backward(params, tape, dlogit, grad);
  }
  const double inv = 1.0 / static_cast<double>(order.size());
  for (double& v : grad.values()) v *= inv;
  return grad;
}

}  // namespace

ModelParams batch_gradient(const ModelParams& params, const SampleSet& data, std::span<const std::size_t> batch,
                           double* mean_loss) {
  require(!batch.empty(), ErrorCode::EmptyDataset, "empty batch");
  BatchStats stats;
  ModelParams g = batch_gradient_impl(params, data, batch, stats);
  if (mean_loss) *mean_loss = stats.loss_sum / static_cast<double>(batch.size());
  return g;
}

ModelParams train_local(const ModelParams& params, const SampleSet& data, const TrainConfig& config,
                        const EpochCallback& on_epoch) {
  config.validate();
  require(!data.empty(), ErrorCode::EmptyDataset, "cannot train on an empty dataset");
  ModelParams p = params;
  Adam adam(config, p.count());
  Rng rng(mix_seed(config.seed, 0x7a1f));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    BatchStats stats;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const ModelParams grad =
          batch_gradient_impl(p, data, std::span<const std::size_t>(order).subspan(start, end - start), stats);
      adam.step(p, grad);
    }
    if (on_epoch) {
      const double n = static_cast<double>(order.size());
      on_epoch(epoch, p, Metrics{static_cast<double>(stats.correct) / n, stats.loss_sum / n});
    }
  }
  return p;
}

Metrics measure(const ModelParams& params, const SampleSet& data) {
  require(!data.empty(), ErrorCode::EmptyDataset, "cannot evaluate on an empty set");
  std::size_t correct = 0;
  double loss = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const LabeledSample& s = data[i];
    const double z = forward_logit(params, s.window);
    loss += logit_loss(z, s.label);
    correct += decide(logistic(z)) == s.label ? 1 : 0;
  }
  const double n = static_cast<double>(data.size());
  return {static_cast<double>(correct) / n, loss / n};
}

double accuracy(const ModelParams& params, const SampleSet& data) { return measure(params, data).accuracy; }

}  // namespace das
