#ifndef IDMATCH_CONFIG_JSON_HPP_
#define IDMATCH_CONFIG_JSON_HPP_

#include <string>
#include <vector>

#include <json.hpp>

#include "idmatch/common.hpp"
#include "idmatch/imprinting.hpp"
#include "idmatch/network.hpp"
#include "idmatch/training.hpp"

namespace idmatch {

using Json = nlohmann::json;

// Name maps.  Parsers list the accepted spellings in their error message so
// the CLI can surface them directly.

inline std::string sampler_name(SamplerKind kind) {
  switch (kind) {
    case SamplerKind::RandomImages: return "images";
    case SamplerKind::RandomPairs: return "pairs";
    case SamplerKind::RandomDomainPairs: return "domain-pairs";
  }
  return "?";
}

inline SamplerKind parse_sampler(const std::string& name) {
  if (name == "images") return SamplerKind::RandomImages;
  if (name == "pairs") return SamplerKind::RandomPairs;
  if (name == "domain-pairs") return SamplerKind::RandomDomainPairs;
  throw ArgumentError("unknown sampler '" + name +
                      "' (valid: images, pairs, domain-pairs)");
}

inline LossKind parse_loss(const std::string& name) {
  if (name == "softmax") return LossKind::Softmax;
  if (name == "am-softmax") return LossKind::AmSoftmax;
  if (name == "contrastive") return LossKind::Contrastive;
  if (name == "triplet") return LossKind::Triplet;
  if (name == "diam") return LossKind::DiamSoftmax;
  throw ArgumentError(
      "unknown loss '" + name +
      "' (valid: softmax, am-softmax, contrastive, triplet, diam)");
}

inline std::string target_mode_name(TargetMode mode) {
  switch (mode) {
    case TargetMode::DocFeature: return "doc";
    case TargetMode::LiveFeature: return "live";
    case TargetMode::AverageFeature: return "average";
  }
  return "?";
}

inline TargetMode parse_target_mode(const std::string& name) {
  if (name == "doc") return TargetMode::DocFeature;
  if (name == "live") return TargetMode::LiveFeature;
  if (name == "average") return TargetMode::AverageFeature;
  throw ArgumentError("unknown imprint target '" + name +
                      "' (valid: doc, live, average)");
}

inline std::string schedule_name(ImprintSchedule schedule) {
  switch (schedule) {
    case ImprintSchedule::Dynamic: return "dynamic";
    case ImprintSchedule::StaticFixed: return "static-fixed";
    case ImprintSchedule::StaticPeriodical: return "static-periodical";
  }
  return "?";
}

inline ImprintSchedule parse_schedule(const std::string& name) {
  if (name == "dynamic") return ImprintSchedule::Dynamic;
  if (name == "static-fixed") return ImprintSchedule::StaticFixed;
  if (name == "static-periodical") return ImprintSchedule::StaticPeriodical;
  throw ArgumentError("unknown imprint schedule '" + name +
                      "' (valid: dynamic, static-fixed, static-periodical)");
}

inline std::string activation_name(Activation act) {
  return act == Activation::Tanh ? "tanh" : "identity";
}

inline Activation parse_activation(const std::string& name) {
  if (name == "tanh") return Activation::Tanh;
  if (name == "identity") return Activation::Identity;
  throw ArgumentError("unknown activation '" + name +
                      "' (valid: tanh, identity)");
}

// ---------------------------------------------------------------------------
// TrainConfig <-> JSON.  apply_train_config overlays only the keys present,
// so the same code path serves full config files and sparse grid patches.
// Unknown keys are rejected to catch typos.
// ---------------------------------------------------------------------------

inline Json train_config_to_json(const TrainConfig& c) {
  return Json{
      {"batch", c.batch_size},
      {"steps", c.steps},
      {"seed", c.seed},
      {"loss", loss_kind_name(c.loss)},
      {"sampler", sampler_name(c.sampler)},
      {"sharing", c.sharing},
      {"margin", c.margin},
      {"scale", c.initial_scale},
      {"contrastive-margin", c.contrastive_margin},
      {"triplet-margin", c.triplet_margin},
      {"imprint",
       {{"alpha", c.imprint.alpha},
        {"target", target_mode_name(c.imprint.target_mode)},
        {"schedule", schedule_name(c.imprint.schedule)},
        {"period-epochs", c.imprint.period_epochs}}},
      {"net",
       {{"hidden", c.net.hidden},
        {"embed", c.net.embed_dim},
        {"activation", activation_name(c.net.hidden_activation)}}},
      {"opt",
       {{"lr", c.opt.lr.base},
        {"lr-drop-factor", c.opt.lr.drop_factor},
        {"lr-drop-at", c.opt.lr.drop_at_frac},
        {"momentum", c.opt.momentum},
        {"weight-decay", c.opt.weight_decay}}},
  };
}

inline void apply_train_config(TrainConfig& c, const Json& patch,
                               const std::string& where = "config") {
  if (!patch.is_object()) {
    throw ArgumentError(where + " must be a JSON object");
  }
  for (const auto& [key, value] : patch.items()) {
    try {
      if (key == "batch") c.batch_size = value.get<int>();
      else if (key == "steps") c.steps = value.get<int>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "loss") c.loss = parse_loss(value.get<std::string>());
      else if (key == "sampler") c.sampler = parse_sampler(value.get<std::string>());
      else if (key == "sharing") c.sharing = value.get<std::string>();
      else if (key == "margin") c.margin = value.get<double>();
      else if (key == "scale") c.initial_scale = value.get<double>();
      else if (key == "contrastive-margin") c.contrastive_margin = value.get<double>();
      else if (key == "triplet-margin") c.triplet_margin = value.get<double>();
      else if (key == "imprint") {
        if (!value.is_object()) throw ArgumentError("imprint must be an object");
        for (const auto& [k2, v2] : value.items()) {
          if (k2 == "alpha") c.imprint.alpha = v2.get<double>();
          else if (k2 == "target") c.imprint.target_mode = parse_target_mode(v2.get<std::string>());
          else if (k2 == "schedule") c.imprint.schedule = parse_schedule(v2.get<std::string>());
          else if (k2 == "period-epochs") c.imprint.period_epochs = v2.get<int>();
          else throw ArgumentError("unknown imprint key '" + k2 + "'");
        }
      } else if (key == "net") {
        if (!value.is_object()) throw ArgumentError("net must be an object");
        for (const auto& [k2, v2] : value.items()) {
          if (k2 == "hidden") c.net.hidden = v2.get<std::vector<int>>();
          else if (k2 == "embed") c.net.embed_dim = v2.get<int>();
          else if (k2 == "activation") c.net.hidden_activation = parse_activation(v2.get<std::string>());
          else throw ArgumentError("unknown net key '" + k2 + "'");
        }
      } else if (key == "opt") {
        if (!value.is_object()) throw ArgumentError("opt must be an object");
        for (const auto& [k2, v2] : value.items()) {
          if (k2 == "lr") c.opt.lr.base = v2.get<double>();
          else if (k2 == "lr-drop-factor") c.opt.lr.drop_factor = v2.get<double>();
          else if (k2 == "lr-drop-at") c.opt.lr.drop_at_frac = v2.get<double>();
          else if (k2 == "momentum") c.opt.momentum = v2.get<double>();
          else if (k2 == "weight-decay") c.opt.weight_decay = v2.get<double>();
          else throw ArgumentError("unknown opt key '" + k2 + "'");
        }
      } else {
        throw ArgumentError("unknown key '" + key + "'");
      }
    } catch (const Json::exception& err) {
      throw ArgumentError(where + ": bad value for '" + key + "': " +
                          err.what());
    }
  }
}

inline TrainConfig train_config_from_json(const Json& j,
                                          const std::string& where = "config") {
  TrainConfig c;
  apply_train_config(c, j, where);
  return c;
}

}  // namespace idmatch

#endif  // IDMATCH_CONFIG_JSON_HPP_
