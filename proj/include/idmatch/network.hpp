#ifndef IDMATCH_NETWORK_HPP_
#define IDMATCH_NETWORK_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "idmatch/common.hpp"
#include "idmatch/dataset.hpp"

namespace idmatch {

enum class Activation { Identity, Tanh };

inline double apply_activation(Activation act, double z) {
  return act == Activation::Tanh ? std::tanh(z) : z;
}

inline double activation_derivative(Activation act, double post) {
  // Derivative expressed through the post-activation value.
  return act == Activation::Tanh ? 1.0 - post * post : 1.0;
}

struct Layer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;
  Activation activation = Activation::Identity;
};

struct LayerGrad {
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;
};

// Analytic gradients for every parameter of a network plus the input.
struct GradientSet {
  std::vector<LayerGrad> layers;
  Eigen::VectorXd input;
};

struct NetworkConfig {
  std::vector<int> hidden{64, 64};
  int embed_dim = 32;
  Activation hidden_activation = Activation::Tanh;

  int layer_count() const { return static_cast<int>(hidden.size()) + 1; }
};

// Feedforward embedding extractor.  forward() counts its invocations so
// tests and cost accounting can observe how many passes a procedure spends.
class EmbeddingNetwork {
 public:
  EmbeddingNetwork() = default;

  // Seeded Gaussian init scaled by fan-in; biases start at zero.
  static EmbeddingNetwork create(const NetworkConfig& config, int d_in,
                                 std::uint64_t seed) {
    if (d_in < 1) throw ArgumentError("network input dimension must be >= 1");
    if (config.embed_dim < 1) throw ArgumentError("embedding dimension must be >= 1");
    EmbeddingNetwork net;
    Rng rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    int in_dim = d_in;
    std::vector<int> widths = config.hidden;
    widths.push_back(config.embed_dim);
    for (std::size_t l = 0; l < widths.size(); ++l) {
      const int out_dim = widths[l];
      if (out_dim < 1) throw ArgumentError("layer width must be >= 1");
      Layer layer;
      layer.weight.resize(out_dim, in_dim);
      const double scale = 1.0 / std::sqrt(static_cast<double>(in_dim));
      for (int r = 0; r < out_dim; ++r) {
        for (int c = 0; c < in_dim; ++c) layer.weight(r, c) = scale * gauss(rng);
      }
      layer.bias = Eigen::VectorXd::Zero(out_dim);
      layer.activation = (l + 1 < widths.size()) ? config.hidden_activation
                                                 : Activation::Identity;
      net.layers_.push_back(std::move(layer));
      in_dim = out_dim;
    }
    net.d_in_ = d_in;
    net.d_out_ = config.embed_dim;
    return net;
  }

  Eigen::VectorXd forward(const Eigen::VectorXd& input) const {
    check_input(input);
    ++forward_calls_;
    Eigen::VectorXd a = input;
    for (const Layer& layer : layers_) {
      a = (layer.weight * a + layer.bias)
              .unaryExpr([&](double z) { return apply_activation(layer.activation, z); });
    }
    return a;
  }

  // Chain rule through every layer; recomputes the forward activations.
  GradientSet backward(const Eigen::VectorXd& input,
                       const Eigen::VectorXd& upstream) const {
    check_input(input);
    if (upstream.size() != d_out_) {
      throw ArgumentError("upstream gradient has dimension " +
                          std::to_string(upstream.size()) + ", expected " +
                          std::to_string(d_out_));
    }
    std::vector<Eigen::VectorXd> activations;  // a_0 = input, a_L = embedding
    activations.reserve(layers_.size() + 1);
    activations.push_back(input);
    for (const Layer& layer : layers_) {
      activations.push_back(
          (layer.weight * activations.back() + layer.bias)
              .unaryExpr([&](double z) { return apply_activation(layer.activation, z); }));
    }

    GradientSet grads;
    grads.layers.resize(layers_.size());
    Eigen::VectorXd delta = upstream;
    for (int l = static_cast<int>(layers_.size()) - 1; l >= 0; --l) {
      const Layer& layer = layers_[static_cast<std::size_t>(l)];
      const Eigen::VectorXd& post = activations[static_cast<std::size_t>(l) + 1];
      for (int i = 0; i < delta.size(); ++i) {
        delta[i] *= activation_derivative(layer.activation, post[i]);
      }
      grads.layers[static_cast<std::size_t>(l)].weight =
          delta * activations[static_cast<std::size_t>(l)].transpose();
      grads.layers[static_cast<std::size_t>(l)].bias = delta;
      delta = layer.weight.transpose() * delta;
    }
    grads.input = std::move(delta);
    return grads;
  }

  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }
  int d_in() const { return d_in_; }
  int d_out() const { return d_out_; }

  std::uint64_t forward_calls() const { return forward_calls_; }
  void reset_forward_calls() const { forward_calls_ = 0; }

  bool same_architecture(const EmbeddingNetwork& other) const {
    if (layers_.size() != other.layers_.size()) return false;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      if (layers_[l].weight.rows() != other.layers_[l].weight.rows() ||
          layers_[l].weight.cols() != other.layers_[l].weight.cols() ||
          layers_[l].activation != other.layers_[l].activation) {
        return false;
      }
    }
    return true;
  }

  bool equal_parameters(const EmbeddingNetwork& other) const {
    if (!same_architecture(other)) return false;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      if (!(layers_[l].weight.array() == other.layers_[l].weight.array()).all())
        return false;
      if (!(layers_[l].bias.array() == other.layers_[l].bias.array()).all())
        return false;
    }
    return true;
  }

 private:
  void check_input(const Eigen::VectorXd& input) const {
    if (input.size() != d_in_) {
      throw ArgumentError("input has dimension " + std::to_string(input.size()) +
                          ", expected " + std::to_string(d_in_));
    }
  }

  std::vector<Layer> layers_;
  int d_in_ = 0;
  int d_out_ = 0;
  mutable std::uint64_t forward_calls_ = 0;
};

// Per-layer tying between the two siblings.  Accepts "none", "all", "low-K"
// (first K layers shared), "high-K" (last K layers shared) and "high-fc" as
// an alias for sharing only the final embedding layer.
struct SharingMask {
  std::vector<bool> shared;

  static SharingMask parse(const std::string& spec, int layer_count) {
    SharingMask mask;
    mask.shared.assign(static_cast<std::size_t>(layer_count), false);
    auto set_range = [&](int begin, int end) {
      for (int l = std::max(0, begin); l < std::min(layer_count, end); ++l) {
        mask.shared[static_cast<std::size_t>(l)] = true;
      }
    };
    if (spec == "none") {
      return mask;
    } else if (spec == "all") {
      set_range(0, layer_count);
    } else if (spec == "high-fc") {
      set_range(layer_count - 1, layer_count);
    } else if (spec.rfind("low-", 0) == 0) {
      const int k = static_cast<int>(parse_int(std::string_view(spec).substr(4),
                                               "sharing mask"));
      if (k < 1) throw ArgumentError("sharing mask '" + spec + "' needs K >= 1");
      set_range(0, k);
    } else if (spec.rfind("high-", 0) == 0) {
      const int k = static_cast<int>(parse_int(std::string_view(spec).substr(5),
                                               "sharing mask"));
      if (k < 1) throw ArgumentError("sharing mask '" + spec + "' needs K >= 1");
      set_range(layer_count - k, layer_count);
    } else {
      throw ArgumentError("unknown sharing mask '" + spec +
                          "' (expected none, all, low-K, high-K or high-fc)");
    }
    return mask;
  }

  bool is_shared(std::size_t layer) const {
    return layer < shared.size() && shared[layer];
  }
};

// Two architecturally identical extractors, one per capture domain, with a
// configurable subset of layers tied.  Both start from the same parameters.
struct SiblingPair {
  EmbeddingNetwork doc_net;
  EmbeddingNetwork live_net;
  SharingMask mask;

  const EmbeddingNetwork& net_for(Domain d) const {
    return d == Domain::DocSide ? doc_net : live_net;
  }
  EmbeddingNetwork& net_for(Domain d) {
    return d == Domain::DocSide ? doc_net : live_net;
  }

  Eigen::VectorXd route(const Sample& sample) const {
    return net_for(sample.domain).forward(sample.input);
  }

  // Shared layers must stay bitwise identical after every update step.
  bool shared_layers_equal() const {
    for (std::size_t l = 0; l < doc_net.layers().size(); ++l) {
      if (!mask.is_shared(l)) continue;
      const Layer& a = doc_net.layers()[l];
      const Layer& b = live_net.layers()[l];
      if (!(a.weight.array() == b.weight.array()).all()) return false;
      if (!(a.bias.array() == b.bias.array()).all()) return false;
    }
    return true;
  }
};

inline SiblingPair make_sibling_pair(const NetworkConfig& config, int d_in,
                                     const SharingMask& mask,
                                     std::uint64_t seed) {
  if (static_cast<int>(mask.shared.size()) != config.layer_count()) {
    throw ArgumentError("sharing mask covers " +
                        std::to_string(mask.shared.size()) + " layers, network has " +
                        std::to_string(config.layer_count()));
  }
  SiblingPair pair;
  pair.doc_net = EmbeddingNetwork::create(config, d_in, seed);
  pair.live_net = pair.doc_net;  // same initialization
  pair.mask = mask;
  return pair;
}

}  // namespace idmatch

#endif  // IDMATCH_NETWORK_HPP_
