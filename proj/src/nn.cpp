#include "fedlwr/nn.hpp"

#include <algorithm>
#include <cmath>

#include "fedlwr/errors.hpp"
#include "fedlwr/rng.hpp"

namespace fedlwr {

namespace {

constexpr std::size_t kKernel = 3;

const std::vector<Topology>& topology_registry() {
  static const std::vector<Topology> registry = {
      {"tinyseg4",
       {{LayerKind::conv2d, 1, 8},
        {LayerKind::conv2d, 8, 16},
        {LayerKind::conv2d, 16, 8},
        {LayerKind::conv2d, 8, 1}},
       std::nullopt},
      {"denseseg8", {{LayerKind::dense, 64, 32}, {LayerKind::dense, 32, 64}}, std::pair{8, 8}},
  };
  return registry;
}

Shape weight_shape(const LayerSpec& spec) {
  if (spec.kind == LayerKind::conv2d) return {spec.out, spec.in, kKernel, kKernel};
  return {spec.out, spec.in};
}

// Per-sample activation geometry. Dense outputs are (features, 1, 1).
struct Geometry {
  std::size_t channels;
  std::size_t height;
  std::size_t width;
  std::size_t size() const { return channels * height * width; }
};

std::vector<Geometry> layer_outputs(const Topology& topo, std::size_t h, std::size_t w) {
  std::vector<Geometry> out;
  Geometry cur{1, h, w};
  for (const auto& spec : topo.layers) {
    if (spec.kind == LayerKind::conv2d) {
      if (cur.channels != spec.in) throw ShapeError("conv layer expects " + std::to_string(spec.in) + " channels");
      cur = {spec.out, cur.height, cur.width};
    } else {
      if (cur.size() != spec.in) {
        throw ShapeError("dense layer expects " + std::to_string(spec.in) + " inputs, got " +
                         std::to_string(cur.size()));
      }
      cur = {spec.out, 1, 1};
    }
    out.push_back(cur);
  }
  if (out.back().size() != h * w) throw ShapeError("topology output does not cover the input grid");
  return out;
}

void validate_params(const Topology& topo, const ModelParams& model) {
  if (model.layers.size() != topo.layers.size()) {
    throw ShapeError("model has " + std::to_string(model.layers.size()) + " layers, topology " +
                     topo.id + " has " + std::to_string(topo.layers.size()));
  }
  for (std::size_t i = 0; i < topo.layers.size(); ++i) {
    const auto& spec = topo.layers[i];
    const auto& layer = model.layers[i];
    if (layer.layer_id != static_cast<int>(i + 1) || layer.kind != spec.kind ||
        layer.weights.shape != weight_shape(spec) || layer.biases.shape != Shape{spec.out}) {
      throw ShapeError("layer " + std::to_string(i + 1) + " parameters do not match topology " + topo.id);
    }
  }
}

void check_batch(const Topology& topo, const Tensor& batch) {
  if (batch.rank() != 4 || batch.dim(1) != 1 || batch.dim(0) == 0 || batch.dim(2) == 0 ||
      batch.dim(3) == 0) {
    throw ShapeError("batch must be [b>=1,1,H,W], got " + shape_string(batch.shape));
  }
  if (topo.fixed_input && (batch.dim(2) != topo.fixed_input->first || batch.dim(3) != topo.fixed_input->second)) {
    throw ShapeError("topology " + topo.id + " needs " + std::to_string(topo.fixed_input->first) + "x" +
                     std::to_string(topo.fixed_input->second) + " inputs, got " + shape_string(batch.shape));
  }
}

// out[o] = bias[o] + sum_c w[o,c] (*) in[c], 3x3 kernel, zero padding 1.
void conv3x3_forward(const double* in, std::size_t cin, std::size_t h, std::size_t w, const double* weights,
                     const double* bias, std::size_t cout, double* out) {
  const std::size_t plane = h * w;
  for (std::size_t o = 0; o < cout; ++o) {
    double* out_o = out + o * plane;
    std::fill(out_o, out_o + plane, bias[o]);
    for (std::size_t c = 0; c < cin; ++c) {
      const double* in_c = in + c * plane;
      const double* w_oc = weights + (o * cin + c) * kKernel * kKernel;
      for (std::size_t ky = 0; ky < kKernel; ++ky) {
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - 1;
        const std::size_t y0 = dy < 0 ? 1 : 0;
        const std::size_t y1 = dy > 0 ? h - 1 : h;
        for (std::size_t kx = 0; kx < kKernel; ++kx) {
          const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - 1;
          const std::size_t x0 = dx < 0 ? 1 : 0;
          const std::size_t x1 = dx > 0 ? w - 1 : w;
          const double wv = w_oc[ky * kKernel + kx];
          for (std::size_t y = y0; y < y1; ++y) {
            const double* src = in_c + (static_cast<std::ptrdiff_t>(y) + dy) * static_cast<std::ptrdiff_t>(w) + dx;
            double* dst = out_o + y * w;
            for (std::size_t x = x0; x < x1; ++x) dst[x] += wv * src[x];
          }
        }
      }
    }
  }
}

// Accumulates weight/bias gradients and (if grad_in != nullptr) the input gradient.
void conv3x3_backward(const double* in, std::size_t cin, std::size_t h, std::size_t w, const double* weights,
                      const double* grad_out, std::size_t cout, double* grad_w, double* grad_b,
                      double* grad_in) {
  const std::size_t plane = h * w;
  std::vector<double> partial(w);
  for (std::size_t o = 0; o < cout; ++o) {
    const double* g_o = grad_out + o * plane;
    double gb = 0.0;
    for (std::size_t i = 0; i < plane; ++i) gb += g_o[i];
    grad_b[o] += gb;
    for (std::size_t c = 0; c < cin; ++c) {
      const double* in_c = in + c * plane;
      double* gin_c = grad_in ? grad_in + c * plane : nullptr;
      const double* w_oc = weights + (o * cin + c) * kKernel * kKernel;
      double* gw_oc = grad_w + (o * cin + c) * kKernel * kKernel;
      for (std::size_t ky = 0; ky < kKernel; ++ky) {
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - 1;
        const std::size_t y0 = dy < 0 ? 1 : 0;
        const std::size_t y1 = dy > 0 ? h - 1 : h;
        for (std::size_t kx = 0; kx < kKernel; ++kx) {
          const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - 1;
          const std::size_t x0 = dx < 0 ? 1 : 0;
          const std::size_t x1 = dx > 0 ? w - 1 : w;
          const double wv = w_oc[ky * kKernel + kx];
          // Column-wise partial sums vectorize; a scalar accumulator does not.
          std::fill(partial.begin(), partial.end(), 0.0);
          for (std::size_t y = y0; y < y1; ++y) {
            const std::ptrdiff_t offset = (static_cast<std::ptrdiff_t>(y) + dy) * static_cast<std::ptrdiff_t>(w) + dx;
            const double* src = in_c + offset;
            const double* g = g_o + y * w;
            for (std::size_t x = x0; x < x1; ++x) partial[x] += g[x] * src[x];
            if (gin_c) {
              double* dst = gin_c + offset;
              for (std::size_t x = x0; x < x1; ++x) dst[x] += wv * g[x];
            }
          }
          double gw = 0.0;
          for (std::size_t x = x0; x < x1; ++x) gw += partial[x];
          gw_oc[ky * kKernel + kx] += gw;
        }
      }
    }
  }
}

void dense_forward(const double* in, std::size_t nin, const double* weights, const double* bias,
                   std::size_t nout, double* out) {
  for (std::size_t o = 0; o < nout; ++o) {
    const double* row = weights + o * nin;
    double acc = bias[o];
    for (std::size_t i = 0; i < nin; ++i) acc += row[i] * in[i];
    out[o] = acc;
  }
}

void dense_backward(const double* in, std::size_t nin, const double* weights, const double* grad_out,
                    std::size_t nout, double* grad_w, double* grad_b, double* grad_in) {
  for (std::size_t o = 0; o < nout; ++o) {
    const double g = grad_out[o];
    grad_b[o] += g;
    double* gw = grad_w + o * nin;
    for (std::size_t i = 0; i < nin; ++i) gw[i] += g * in[i];
    if (grad_in) {
      const double* row = weights + o * nin;
      for (std::size_t i = 0; i < nin; ++i) grad_in[i] += g * row[i];
    }
  }
}

void require_binary(const Tensor& target) {
  for (double v : target.data) {
    if (v != 0.0 && v != 1.0) throw InvalidArgument("dice target must be binary {0,1}");
  }
}

}  // namespace

std::string_view to_string(LayerKind kind) { return kind == LayerKind::conv2d ? "conv2d" : "dense"; }

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weights.size() + l.biases.size();
  return n;
}

void require_compatible(const ModelParams& a, const ModelParams& b) {
  if (a.topology_id != b.topology_id) {
    throw ShapeError("topology mismatch: " + a.topology_id + " vs " + b.topology_id);
  }
  if (a.layers.size() != b.layers.size()) throw ShapeError("layer count mismatch");
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    if (a.layers[i].weights.shape != b.layers[i].weights.shape ||
        a.layers[i].biases.shape != b.layers[i].biases.shape) {
      throw ShapeError("layer " + std::to_string(i + 1) + " shape mismatch");
    }
  }
}

ModelParams zeros_like(const ModelParams& model) {
  ModelParams z = model;
  for (auto& l : z.layers) {
    std::fill(l.weights.data.begin(), l.weights.data.end(), 0.0);
    std::fill(l.biases.data.begin(), l.biases.data.end(), 0.0);
  }
  return z;
}

const Topology& find_topology(std::string_view id) {
  for (const auto& t : topology_registry()) {
    if (t.id == id) return t;
  }
  throw UnknownTopology("unknown topology '" + std::string(id) + "'");
}

std::vector<std::string> registered_topologies() {
  std::vector<std::string> ids;
  for (const auto& t : topology_registry()) ids.push_back(t.id);
  return ids;
}

ModelParams build_model(std::string_view topology_id, std::uint64_t seed) {
  const Topology& topo = find_topology(topology_id);
  Rng rng(mix_seed({seed, 0x1417}));
  ModelParams model{topo.id, {}};
  int id = 1;
  for (const auto& spec : topo.layers) {
    LayerParams layer{id++, spec.kind, Tensor(weight_shape(spec)), Tensor(Shape{spec.out})};
    const std::size_t fan_in = spec.kind == LayerKind::conv2d ? spec.in * kKernel * kKernel : spec.in;
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (double& v : layer.weights.data) v = rng.uniform(-bound, bound);
    model.layers.push_back(std::move(layer));
  }
  return model;
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

ForwardTrace forward(const ModelParams& model, const Tensor& batch) {
  const Topology& topo = find_topology(model.topology_id);
  validate_params(topo, model);
  check_batch(topo, batch);
  require_finite(batch, "forward input");

  const std::size_t b = batch.dim(0), h = batch.dim(2), w = batch.dim(3);
  const auto geometry = layer_outputs(topo, h, w);
  const std::size_t layers = topo.layers.size();

  ForwardTrace trace;
  trace.input = batch;
  trace.logits = Tensor({b, 1, h, w});

  std::vector<FeatureMatrix> acts;
  acts.reserve(layers);
  for (std::size_t m = 0; m < layers; ++m) {
    const auto& spec = topo.layers[m];
    const auto& layer = model.layers[m];
    const Geometry in_geo = m == 0 ? Geometry{1, h, w} : geometry[m - 1];
    FeatureMatrix out(b, geometry[m].size());
    for (std::size_t s = 0; s < b; ++s) {
      const double* in = m == 0 ? batch.data.data() + s * h * w : acts[m - 1].row(s).data();
      double* dst = out.row(s).data();
      if (spec.kind == LayerKind::conv2d) {
        conv3x3_forward(in, spec.in, in_geo.height, in_geo.width, layer.weights.data.data(),
                        layer.biases.data.data(), spec.out, dst);
      } else {
        dense_forward(in, spec.in, layer.weights.data.data(), layer.biases.data.data(), spec.out, dst);
      }
    }
    if (m + 1 == layers) {
      std::copy(out.values().begin(), out.values().end(), trace.logits.data.begin());
      for (double& v : out.values()) v = sigmoid(v);
    } else {
      for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
    }
    acts.push_back(std::move(out));
  }
  require_finite(trace.logits, "forward logits");
  for (std::size_t m = 0; m < layers; ++m) trace.activations.emplace(static_cast<int>(m + 1), std::move(acts[m]));
  return trace;
}

double dice_loss(const Tensor& logits, const Tensor& target, double smoothing) {
  require_same_shape(logits, target, "dice_loss");
  require_binary(target);
  double inter = 0.0, sum_p = 0.0, sum_y = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double p = sigmoid(logits.data[i]);
    inter += p * target.data[i];
    sum_p += p;
    sum_y += target.data[i];
  }
  const double loss = 1.0 - (2.0 * inter + smoothing) / (sum_p + sum_y + smoothing);
  if (!std::isfinite(loss)) throw NumericError("dice loss is not finite");
  return loss;
}

ModelParams backward(const ModelParams& model, const ForwardTrace& trace, const Tensor& target,
                     double smoothing) {
  const Topology& topo = find_topology(model.topology_id);
  validate_params(topo, model);
  const std::size_t layers = topo.layers.size();
  if (trace.input.rank() != 4 || trace.logits.shape != trace.input.shape) {
    throw ShapeError("trace does not come from a forward pass");
  }
  require_same_shape(trace.logits, target, "backward target");
  require_binary(target);
  const std::size_t b = trace.input.dim(0), h = trace.input.dim(2), w = trace.input.dim(3);
  const auto geometry = layer_outputs(topo, h, w);
  if (trace.activations.size() != layers) throw ShapeError("trace/model mismatch: activation count");
  for (std::size_t m = 0; m < layers; ++m) {
    auto it = trace.activations.find(static_cast<int>(m + 1));
    if (it == trace.activations.end() || it->second.rows() != b || it->second.cols() != geometry[m].size()) {
      throw ShapeError("trace/model mismatch at layer " + std::to_string(m + 1));
    }
  }

  // dL/dz for the output layer. p is the last activation.
  const FeatureMatrix& prob = trace.activations.at(static_cast<int>(layers));
  const auto p = prob.values();
  double inter = 0.0, sum_p = 0.0, sum_y = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    inter += p[i] * target.data[i];
    sum_p += p[i];
    sum_y += target.data[i];
  }
  const double num = 2.0 * inter + smoothing;
  const double den = sum_p + sum_y + smoothing;
  FeatureMatrix delta(b, geometry.back().size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double dloss_dp = -(2.0 * target.data[i] * den - num) / (den * den);
    delta.values()[i] = dloss_dp * p[i] * (1.0 - p[i]);
  }

  ModelParams grads = zeros_like(model);
  for (std::size_t m = layers; m-- > 0;) {
    const auto& spec = topo.layers[m];
    const auto& layer = model.layers[m];
    auto& g = grads.layers[m];
    const Geometry in_geo = m == 0 ? Geometry{1, h, w} : geometry[m - 1];
    FeatureMatrix grad_in = m == 0 ? FeatureMatrix() : FeatureMatrix(b, in_geo.size());
    for (std::size_t s = 0; s < b; ++s) {
      const double* in = m == 0 ? trace.input.data.data() + s * h * w
                                : trace.activations.at(static_cast<int>(m)).row(s).data();
      double* gin = m == 0 ? nullptr : grad_in.row(s).data();
      if (spec.kind == LayerKind::conv2d) {
        conv3x3_backward(in, spec.in, in_geo.height, in_geo.width, layer.weights.data.data(),
                         delta.row(s).data(), spec.out, g.weights.data.data(), g.biases.data.data(), gin);
      } else {
        dense_backward(in, spec.in, layer.weights.data.data(), delta.row(s).data(), spec.out,
                       g.weights.data.data(), g.biases.data.data(), gin);
      }
    }
    if (m == 0) break;
    // ReLU: a > 0 exactly where the pre-activation was positive.
    const auto a = trace.activations.at(static_cast<int>(m)).values();
    auto gi = grad_in.values();
    for (std::size_t i = 0; i < gi.size(); ++i) {
      if (a[i] <= 0.0) gi[i] = 0.0;
    }
    delta = std::move(grad_in);
  }
  for (const auto& l : grads.layers) {
    require_finite(l.weights, "weight gradient");
    require_finite(l.biases, "bias gradient");
  }
  return grads;
}

AdamState make_adam_state(const ModelParams& model, const AdamOptions& options) {
  AdamState s;
  s.first_moment = zeros_like(model);
  s.second_moment = zeros_like(model);
  s.lr = options.lr;
  s.beta1 = options.beta1;
  s.beta2 = options.beta2;
  s.eps = options.eps;
  s.weight_decay = options.weight_decay;
  return s;
}

std::pair<ModelParams, AdamState> adam_step(ModelParams model, const ModelParams& grads, AdamState state) {
  require_compatible(model, grads);
  require_compatible(model, state.first_moment);
  require_compatible(model, state.second_moment);

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(state.beta1, t);
  const double bias2 = 1.0 - std::pow(state.beta2, t);
  const double decay = state.lr * state.weight_decay;

  auto update = [&](Tensor& param, const Tensor& grad, Tensor& m1, Tensor& m2) {
    for (std::size_t i = 0; i < param.size(); ++i) {
      const double g = grad.data[i];
      param.data[i] -= decay * param.data[i];
      m1.data[i] = state.beta1 * m1.data[i] + (1.0 - state.beta1) * g;
      m2.data[i] = state.beta2 * m2.data[i] + (1.0 - state.beta2) * g * g;
      const double m_hat = m1.data[i] / bias1;
      const double v_hat = m2.data[i] / bias2;
      param.data[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
    require_finite(param, "adam update");
  };
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    update(model.layers[l].weights, grads.layers[l].weights, state.first_moment.layers[l].weights,
           state.second_moment.layers[l].weights);
    update(model.layers[l].biases, grads.layers[l].biases, state.first_moment.layers[l].biases,
           state.second_moment.layers[l].biases);
  }
  return {std::move(model), std::move(state)};
}

}  // namespace fedlwr
