#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "egcnn/data.hpp"
#include "egcnn/edge_field.hpp"
#include "egcnn/grid.hpp"
#include "egcnn/layers.hpp"
#include "egcnn/numerics.hpp"
#include "egcnn/rng.hpp"

namespace egcnn {

struct LayerSpec {
  LayerKind kind = LayerKind::egcl;
  std::size_t kernel = 3;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  Activation activation = Activation::none;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

enum class UpsamplerKind { edge, normal, sparse };

inline const char* to_string(UpsamplerKind k) {
  switch (k) {
    case UpsamplerKind::edge: return "edge";
    case UpsamplerKind::normal: return "normal";
    case UpsamplerKind::sparse: return "sparse";
  }
  return "?";
}

inline UpsamplerKind parse_upsampler_kind(const std::string& s) {
  if (s == "edge") return UpsamplerKind::edge;
  if (s == "normal") return UpsamplerKind::normal;
  if (s == "sparse") return UpsamplerKind::sparse;
  throw std::invalid_argument("unknown network kind '" + s + "' (expected edge, normal, sparse)");
}

inline LayerKind layer_kind_for(UpsamplerKind k) {
  switch (k) {
    case UpsamplerKind::edge: return LayerKind::egcl;
    case UpsamplerKind::normal: return LayerKind::nconv;
    case UpsamplerKind::sparse: return LayerKind::sconv;
  }
  return LayerKind::egcl;
}

struct NetworkSpec {
  std::vector<LayerSpec> layers;
  Gamma gamma = Gamma::softplus;

  /// Seven guided layers: kernels 5,5,5,3,3,3 at width 2, then a 1x1 head to one channel.
  static NetworkSpec upsampler(UpsamplerKind kind, Gamma g = Gamma::softplus) {
    const LayerKind lk = layer_kind_for(kind);
    NetworkSpec s;
    s.gamma = g;
    const std::size_t kernels[] = {5, 5, 5, 3, 3, 3};
    std::size_t in = 1;
    for (std::size_t k : kernels) {
      s.layers.push_back({lk, k, in, 2, Activation::none});
      in = 2;
    }
    s.layers.push_back({lk, 1, 2, 1, Activation::none});
    return s;
  }

  /// 3x3 convolution with ReLU followed by a linear 1x1 head, over 2K input channels.
  static NetworkSpec fusion(std::size_t branches, std::size_t hidden = 8) {
    if (branches < 2) throw std::invalid_argument("fusion: need at least 2 branches");
    NetworkSpec s;
    s.layers.push_back({LayerKind::plain_conv, 3, 2 * branches, hidden, Activation::relu});
    s.layers.push_back({LayerKind::plain_conv, 1, hidden, 1, Activation::none});
    return s;
  }

  void validate() const {
    if (layers.empty()) throw std::invalid_argument("NetworkSpec: no layers");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& L = layers[l];
      if (L.kernel % 2 == 0) throw std::invalid_argument("NetworkSpec: even kernel size");
      if (l > 0 && L.in_channels != layers[l - 1].out_channels)
        throw std::invalid_argument("NetworkSpec: channel mismatch entering layer " +
                                    std::to_string(l));
    }
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& L : layers)
      n += L.kernel * L.kernel * L.in_channels * L.out_channels + L.out_channels;
    return n;
  }

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

/// Per-layer parameter gradients, shaped like the network's parameters.
struct NetworkGradients {
  std::vector<std::vector<double>> w;
  std::vector<std::vector<double>> b;
};

template <typename T = float>
class Network {
 public:
  Network() = default;

  explicit Network(NetworkSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    for (const auto& L : spec_.layers)
      params_.emplace_back(L.kernel, L.in_channels, L.out_channels, spec_.gamma);
  }

  /// Weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero.
  void initialize(std::uint64_t seed) {
    Rng rng(seed);
    for (auto& p : params_) {
      const double bound =
          1.0 / std::sqrt(static_cast<double>(p.kernel_size() * p.kernel_size() * p.in_channels()));
      for (auto& w : p.w.weights()) w = static_cast<T>(rng.uniform(-bound, bound));
      std::fill(p.b.begin(), p.b.end(), T{0});
    }
  }

  const NetworkSpec& spec() const noexcept { return spec_; }
  std::span<EgclParams<T>> params() noexcept { return params_; }
  std::span<const EgclParams<T>> params() const noexcept { return params_; }
  std::size_t layer_count() const noexcept { return params_.size(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.parameter_count();
    return n;
  }

  /// All weights then biases, layer by layer.
  std::vector<double> flat_parameters() const {
    std::vector<double> v;
    v.reserve(parameter_count());
    for (const auto& p : params_) {
      for (auto w : p.w.weights()) v.push_back(static_cast<double>(w));
      for (auto b : p.b) v.push_back(static_cast<double>(b));
    }
    return v;
  }

  void set_flat_parameters(std::span<const double> v) {
    if (v.size() != parameter_count())
      throw std::invalid_argument("set_flat_parameters: size mismatch");
    std::size_t k = 0;
    for (auto& p : params_) {
      for (auto& w : p.w.weights()) w = static_cast<T>(v[k++]);
      for (auto& b : p.b) b = static_cast<T>(v[k++]);
    }
  }

  LayerIO<T> run_layer(std::size_t l, const LayerIO<T>& in) const {
    const auto& L = spec_.layers[l];
    switch (L.kind) {
      case LayerKind::egcl: return egcl_forward(in, params_[l]);
      case LayerKind::nconv: return nconv_forward(in, params_[l]);
      case LayerKind::sconv: return sconv_forward(in, params_[l]);
      case LayerKind::plain_conv: return plain_conv_forward(in, params_[l], L.activation);
    }
    throw std::logic_error("run_layer: bad layer kind");
  }

  LayerIO<T> forward(LayerIO<T> in) const {
    for (std::size_t l = 0; l < params_.size(); ++l) in = run_layer(l, in);
    return in;
  }

  /// Saved activations and the tape of layer adjoints for one forward pass.
  struct Pass {
    std::vector<LayerIO<T>> activations;  ///< [0] is the input, back() is the output
    GradTape tape;
    GridD up_data;
    GridD up_conf;
    NetworkGradients grads;

    const LayerIO<T>& output() const { return activations.back(); }
  };

  void forward_recorded(LayerIO<T> in, Pass& pass) const {
    pass.activations.clear();
    pass.activations.reserve(params_.size() + 1);
    pass.activations.push_back(std::move(in));
    pass.tape.clear();
    pass.grads.w.assign(params_.size(), {});
    pass.grads.b.assign(params_.size(), {});
    for (std::size_t l = 0; l < params_.size(); ++l) {
      pass.activations.push_back(run_layer(l, pass.activations[l]));
      pass.tape.record([this, &pass, l] { layer_adjoint(l, pass); });
    }
  }

  /// Replay the tape given the loss gradient on the output data (and optionally confidence).
  void backward(Pass& pass, GridD up_data, GridD up_conf = {}) const {
    pass.up_data = std::move(up_data);
    pass.up_conf = std::move(up_conf);
    pass.tape.backward();
  }

 private:
  void layer_adjoint(std::size_t l, Pass& pass) const {
    const auto& L = spec_.layers[l];
    const auto& in = pass.activations[l];
    LayerGrads g;
    switch (L.kind) {
      case LayerKind::egcl: g = egcl_backward(in, params_[l], pass.up_data, pass.up_conf); break;
      case LayerKind::nconv: g = nconv_backward(in, params_[l], pass.up_data, pass.up_conf); break;
      case LayerKind::sconv: g = sconv_backward(in, params_[l], pass.up_data); break;
      case LayerKind::plain_conv:
        g = plain_conv_backward(in, params_[l], L.activation, pass.activations[l + 1],
                                pass.up_data);
        g.confidence = pass.up_conf;
        break;
    }
    pass.grads.w[l] = std::move(g.w);
    pass.grads.b[l] = std::move(g.b);
    pass.up_data = std::move(g.data);
    pass.up_conf = std::move(g.confidence);
  }

  NetworkSpec spec_;
  std::vector<EgclParams<T>> params_;
};

// ---------------------------------------------------------------------------
// Upsampling subnetwork

struct UpsamplerModel {
  UpsamplerKind kind = UpsamplerKind::edge;
  Network<float> net;
};

inline UpsamplerModel build_upsampler(UpsamplerKind kind, std::uint64_t seed = 0,
                                      Gamma g = Gamma::softplus) {
  UpsamplerModel m{kind, Network<float>(NetworkSpec::upsampler(kind, g))};
  m.net.initialize(seed);
  return m;
}

struct UpsampleResult {
  GridF depth;
  GridF confidence;
};

/// Assemble the three input streams. The edge-dist field is required for the edge kind
/// and ignored otherwise.
inline LayerIO<float> upsampler_input(UpsamplerKind kind, const SparseDepthSample& sample,
                                      const EdgeDistField* field) {
  if (!sample.sparse_depth.same_shape(sample.confidence))
    throw std::invalid_argument("upsample: depth and confidence are not aligned");
  for (auto c : sample.confidence.values())
    if (!(c >= 0.0f && c <= 1.0f)) throw std::invalid_argument("upsample: confidence outside [0,1]");
  LayerIO<float> io{sample.sparse_depth, sample.confidence, {}};
  if (kind == UpsamplerKind::edge) {
    if (!field) throw std::invalid_argument("upsample: edge model requires an edge-dist field");
    if (!field->values.same_spatial(sample.sparse_depth))
      throw std::invalid_argument("upsample: edge-dist field is not aligned with the depth map");
    io.edge_dist = field->values;
  }
  return io;
}

inline UpsampleResult upsample(const UpsamplerModel& model, const SparseDepthSample& sample,
                               const EdgeDistField* field) {
  LayerIO<float> out = model.net.forward(upsampler_input(model.kind, sample, field));
  return {std::move(out.data), std::move(out.confidence)};
}

// ---------------------------------------------------------------------------
// Fusion subnetwork

struct FusionModel {
  std::size_t branches = 2;
  Network<float> net;
};

inline FusionModel build_fusion(std::size_t branches, std::uint64_t seed = 0,
                                std::size_t hidden = 8) {
  FusionModel m{branches, Network<float>(NetworkSpec::fusion(branches, hidden))};
  m.net.initialize(seed);
  return m;
}

/// Channels [0, K) hold each branch depth times its share of the summed branch
/// confidence; channels [K, 2K) hold the raw branch confidences.
inline GridF fusion_input(std::span<const UpsampleResult> branches) {
  if (branches.size() < 2) throw std::invalid_argument("fuse: need at least 2 branches");
  const auto& ref = branches.front().depth;
  for (const auto& b : branches)
    if (!b.depth.same_shape(ref) || !b.confidence.same_shape(ref) || ref.channels() != 1)
      throw std::invalid_argument("fuse: branch outputs are not aligned");
  const std::size_t K = branches.size();
  GridF in(ref.height(), ref.width(), 2 * K);
  for (std::size_t p = 0; p < ref.pixels(); ++p) {
    double total = 0.0;
    for (const auto& b : branches) total += b.confidence[p];
    for (std::size_t k = 0; k < K; ++k) {
      const double share = total > 0.0 ? branches[k].confidence[p] / total : 1.0 / K;
      in[p * 2 * K + k] = static_cast<float>(branches[k].depth[p] * share);
      in[p * 2 * K + K + k] = branches[k].confidence[p];
    }
  }
  return in;
}

/// Reset the fusion weights so the output equals the confidence-weighted branch average:
/// one hidden unit sums the weighted depths at the center tap and the head copies it.
inline void init_fusion_passthrough(FusionModel& m) {
  auto params = m.net.params();
  auto& first = params[0];
  auto& head = params[1];
  std::fill(first.w.weights().begin(), first.w.weights().end(), 0.0f);
  std::fill(first.b.begin(), first.b.end(), 0.0f);
  std::fill(head.w.weights().begin(), head.w.weights().end(), 0.0f);
  std::fill(head.b.begin(), head.b.end(), 0.0f);
  const std::size_t c = first.kernel_size() / 2;
  for (std::size_t k = 0; k < m.branches; ++k) first.w(c, c, k, 0) = 1.0f;
  head.w(0, 0, 0, 0) = 1.0f;
}

inline GridF fuse(const FusionModel& model, std::span<const UpsampleResult> branches) {
  if (branches.size() != model.branches)
    throw std::invalid_argument("fuse: model expects " + std::to_string(model.branches) +
                                " branches, got " + std::to_string(branches.size()));
  return model.net.forward(LayerIO<float>{fusion_input(branches), {}, {}}).data;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t batch_size = 1;
  std::size_t epochs = 50;
  std::uint64_t seed = 0;
};

struct TrainingExample {
  LayerIO<float> input;
  GridF target;  ///< pixels with target <= 0 are excluded from the loss
};

/// Supplies example `index` for `epoch`; lets callers redraw sparse samples per epoch.
using ExampleSource = std::function<TrainingExample(std::size_t index, std::size_t epoch)>;

/// Mean |z - t| over pixels with t > 0, and its gradient with respect to z.
inline double masked_l1(const GridF& z, const GridF& t, GridD* grad = nullptr) {
  if (!z.same_shape(t)) throw std::invalid_argument("masked_l1: shape mismatch");
  std::size_t n = 0;
  double sum = 0.0;
  for (std::size_t k = 0; k < z.size(); ++k)
    if (t[k] > 0.0f) {
      sum += std::abs(static_cast<double>(z[k]) - t[k]);
      ++n;
    }
  if (n == 0) throw std::invalid_argument("masked_l1: no valid ground-truth pixels");
  if (grad) {
    *grad = GridD(z.height(), z.width(), z.channels());
    for (std::size_t k = 0; k < z.size(); ++k)
      if (t[k] > 0.0f) {
        const double d = static_cast<double>(z[k]) - t[k];
        (*grad)[k] = (d > 0.0 ? 1.0 : d < 0.0 ? -1.0 : 0.0) / static_cast<double>(n);
      }
  }
  return sum / static_cast<double>(n);
}

class Adam {
 public:
  Adam(std::size_t n, const TrainConfig& cfg) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::vector<double>& params, std::span<const double> grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      m_[k] = cfg_.beta1 * m_[k] + (1.0 - cfg_.beta1) * grad[k];
      v_[k] = cfg_.beta2 * v_[k] + (1.0 - cfg_.beta2) * grad[k] * grad[k];
      params[k] -= cfg_.learning_rate * (m_[k] / c1) / (std::sqrt(v_[k] / c2) + cfg_.adam_epsilon);
    }
  }

 private:
  TrainConfig cfg_;
  std::vector<double> m_, v_;
  std::size_t t_ = 0;
};

/// Adam on masked L1. Returns the mean training loss of each epoch. Deterministic for a
/// given seed: the example order is a seeded shuffle and batch gradients are reduced in
/// a fixed order.
inline std::vector<double> train(Network<float>& net, std::size_t count, const ExampleSource& source,
                                 const TrainConfig& cfg) {
  if (count == 0) throw std::invalid_argument("train: empty dataset");
  if (!(cfg.learning_rate >= 0.0)) throw std::invalid_argument("train: negative learning rate");
  if (cfg.batch_size == 0) throw std::invalid_argument("train: batch size must be >= 1");

  std::vector<double> params = net.flat_parameters();
  Adam adam(params.size(), cfg);
  std::vector<double> history;
  std::vector<std::size_t> order(count);
  Network<float>::Pass pass;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t k = 0; k < count; ++k) order[k] = k;
    Rng rng(derive_seed(cfg.seed, epoch));
    for (std::size_t k = count; k > 1; --k) std::swap(order[k - 1], order[rng.below(k)]);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < count; start += cfg.batch_size) {
      const std::size_t end = std::min(count, start + cfg.batch_size);
      std::vector<double> grad(params.size(), 0.0);
      for (std::size_t s = start; s < end; ++s) {
        const TrainingExample ex = source(order[s], epoch);
        net.forward_recorded(ex.input, pass);
        GridD up;
        const double loss = masked_l1(pass.output().data, ex.target, &up);
        if (!std::isfinite(loss))
          throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                   ", example " + std::to_string(order[s]));
        epoch_loss += loss;
        net.backward(pass, std::move(up));
        std::size_t k = 0;
        for (std::size_t l = 0; l < net.layer_count(); ++l) {
          for (double g : pass.grads.w[l]) grad[k++] += g;
          for (double g : pass.grads.b[l]) grad[k++] += g;
        }
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      for (auto& g : grad) g *= inv;
      adam.step(params, grad);
      for (double v : params)
        if (!std::isfinite(v) || !std::isfinite(static_cast<float>(v)))
          throw std::runtime_error("train: non-finite parameter after update in epoch " +
                                   std::to_string(epoch));
      net.set_flat_parameters(params);
      // keep the master copy at storage precision so checkpoints reproduce training exactly
      params = net.flat_parameters();
    }
    history.push_back(epoch_loss / static_cast<double>(count));
  }
  return history;
}

inline std::vector<double> train(Network<float>& net, std::span<const TrainingExample> examples,
                                 const TrainConfig& cfg) {
  return train(
      net, examples.size(),
      [&](std::size_t i, std::size_t) { return examples[i]; }, cfg);
}

}  // namespace egcnn
