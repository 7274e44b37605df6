#ifndef IDMATCH_CHECKPOINT_HPP_
#define IDMATCH_CHECKPOINT_HPP_

#include <optional>
#include <string>
#include <vector>

#include "idmatch/config_json.hpp"
#include "idmatch/losses.hpp"
#include "idmatch/network.hpp"

namespace idmatch {

namespace detail {

inline Json matrix_to_json(const Eigen::MatrixXd& m) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from_json(const Json& j, const std::string& what) {
  if (!j.is_array() || j.empty() || !j[0].is_array()) {
    throw FormatError(what + ": expected a non-empty array of rows");
  }
  const std::size_t rows = j.size();
  const std::size_t cols = j[0].size();
  Eigen::MatrixXd m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    if (!j[r].is_array() || j[r].size() != cols) {
      throw FormatError(what + ": ragged row " + std::to_string(r));
    }
    for (std::size_t c = 0; c < cols; ++c) {
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          j[r][c].get<double>();
    }
  }
  return m;
}

inline Json vector_to_json(const Eigen::VectorXd& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

inline Eigen::VectorXd vector_from_json(const Json& j, const std::string& what) {
  if (!j.is_array()) throw FormatError(what + ": expected an array");
  Eigen::VectorXd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

inline Json network_to_json(const EmbeddingNetwork& net) {
  Json layers = Json::array();
  for (const Layer& layer : net.layers()) {
    layers.push_back({{"weight", matrix_to_json(layer.weight)},
                      {"bias", vector_to_json(layer.bias)},
                      {"activation", activation_name(layer.activation)}});
  }
  return Json{{"d_in", net.d_in()}, {"layers", std::move(layers)}};
}

inline EmbeddingNetwork network_from_json(const Json& j, const std::string& what) {
  if (!j.is_object() || !j.contains("layers") || !j.contains("d_in")) {
    throw FormatError(what + ": expected {d_in, layers}");
  }
  const Json& layers = j["layers"];
  if (!layers.is_array() || layers.empty()) {
    throw FormatError(what + ": needs at least one layer");
  }
  NetworkConfig config;
  config.hidden.clear();
  for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
    config.hidden.push_back(static_cast<int>(layers[l]["weight"].size()));
  }
  config.embed_dim = static_cast<int>(layers.back()["weight"].size());
  if (layers.size() > 1) {
    config.hidden_activation =
        parse_activation(layers[0]["activation"].get<std::string>());
  }
  EmbeddingNetwork net =
      EmbeddingNetwork::create(config, j["d_in"].get<int>(), 0);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string where = what + " layer " + std::to_string(l);
    Layer& layer = net.layers()[l];
    Eigen::MatrixXd weight = matrix_from_json(layers[l]["weight"], where);
    Eigen::VectorXd bias = vector_from_json(layers[l]["bias"], where);
    if (weight.rows() != layer.weight.rows() ||
        weight.cols() != layer.weight.cols() || bias.size() != layer.bias.size()) {
      throw FormatError(where + ": inconsistent layer shape");
    }
    layer.weight = std::move(weight);
    layer.bias = std::move(bias);
    layer.activation = parse_activation(layers[l]["activation"].get<std::string>());
  }
  return net;
}

}  // namespace detail

// Everything needed to resume scoring: both networks, the head that trained
// them, and enough provenance to enforce the train/eval disjointness guard.
struct Checkpoint {
  SiblingPair pair;
  std::optional<MarginHead> margin_head;
  std::optional<PlainHead> plain_head;
  std::string dataset_hash;             // content hash of the training dataset file
  std::vector<int> trained_identities;  // original ids seen in training
  Json fold;                            // {count, seed, index} or null
  Json train_config;                    // snapshot for provenance
};

inline constexpr const char* kCheckpointFormat = "idmatch-checkpoint";

inline std::string serialize_checkpoint(const Checkpoint& ckpt) {
  Json j{{"format", kCheckpointFormat},
         {"version", 1},
         {"doc_net", detail::network_to_json(ckpt.pair.doc_net)},
         {"live_net", detail::network_to_json(ckpt.pair.live_net)},
         {"sharing", ckpt.pair.mask.shared},
         {"dataset_hash", ckpt.dataset_hash},
         {"trained_identities", ckpt.trained_identities},
         {"fold", ckpt.fold},
         {"train_config", ckpt.train_config}};
  if (ckpt.margin_head) {
    j["margin_head"] = {
        {"weights", detail::matrix_to_json(ckpt.margin_head->weights_raw)},
        {"log_scale", ckpt.margin_head->log_scale},
        {"margin", ckpt.margin_head->margin}};
  }
  if (ckpt.plain_head) {
    j["plain_head"] = {{"weights", detail::matrix_to_json(ckpt.plain_head->weights)},
                       {"bias", detail::vector_to_json(ckpt.plain_head->bias)}};
  }
  return j.dump(2) + "\n";
}

inline Checkpoint parse_checkpoint(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::exception& err) {
    throw FormatError(std::string("checkpoint is not valid JSON: ") + err.what());
  }
  if (!j.is_object() || j.value("format", "") != kCheckpointFormat) {
    throw FormatError("not an idmatch checkpoint");
  }
  if (j.value("version", 0) != 1) {
    throw FormatError("unsupported checkpoint version");
  }
  Checkpoint ckpt;
  ckpt.pair.doc_net = detail::network_from_json(j.at("doc_net"), "doc_net");
  ckpt.pair.live_net = detail::network_from_json(j.at("live_net"), "live_net");
  ckpt.pair.mask.shared = j.at("sharing").get<std::vector<bool>>();
  if (!ckpt.pair.doc_net.same_architecture(ckpt.pair.live_net)) {
    throw FormatError("checkpoint siblings have different architectures");
  }
  if (ckpt.pair.mask.shared.size() != ckpt.pair.doc_net.layers().size()) {
    throw FormatError("sharing mask length does not match layer count");
  }
  if (j.contains("margin_head")) {
    const Json& h = j["margin_head"];
    MarginHead head;
    head.weights_raw = detail::matrix_from_json(h.at("weights"), "margin_head");
    head.log_scale = h.at("log_scale").get<double>();
    head.margin = h.at("margin").get<double>();
    ckpt.margin_head = std::move(head);
  }
  if (j.contains("plain_head")) {
    const Json& h = j["plain_head"];
    PlainHead head;
    head.weights = detail::matrix_from_json(h.at("weights"), "plain_head");
    head.bias = detail::vector_from_json(h.at("bias"), "plain_head");
    ckpt.plain_head = std::move(head);
  }
  ckpt.dataset_hash = j.value("dataset_hash", "");
  if (j.contains("trained_identities")) {
    ckpt.trained_identities = j["trained_identities"].get<std::vector<int>>();
  }
  ckpt.fold = j.value("fold", Json());
  ckpt.train_config = j.value("train_config", Json());
  return ckpt;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  write_file_atomic(path, serialize_checkpoint(ckpt));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  try {
    return parse_checkpoint(read_file(path));
  } catch (const FormatError& err) {
    throw FormatError(path + ": " + err.what());
  }
}

}  // namespace idmatch

#endif  // IDMATCH_CHECKPOINT_HPP_
