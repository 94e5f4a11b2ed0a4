#pragma once
// JSON <-> learner configuration with strict key checking, plus the factory
// that turns a (kind, config) pair into a ready-to-fit learner.

#include "nowcast/gbt.hpp"
#include "nowcast/glm.hpp"
#include "nowcast/mlp.hpp"

#include <json.hpp>

#include <memory>
#include <string>
#include <vector>

namespace nowcast {

// reject unknown keys so config typos fail loudly instead of silently
inline void check_keys(const nlohmann::json& obj, const std::vector<std::string>& allowed,
                       const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const auto& k : allowed)
      if (it.key() == k) {
        ok = true;
        break;
      }
    if (!ok) throw ConfigError(where + ": unknown key \"" + it.key() + "\"");
  }
}

// -------------------------------------------------------------------- gbt

inline nlohmann::json gbt_model_config_to_json(const GbtModelConfig& c) {
  return {{"eta", c.eta},          {"t_first", c.t_first},
          {"t_later", c.t_later},  {"depth", c.depth},
          {"patience", c.patience}, {"min_child_weight", c.min_child_weight}};
}

inline GbtModelConfig gbt_model_config_from_json(const nlohmann::json& j,
                                                 const std::string& where) {
  check_keys(j, {"eta", "t_first", "t_later", "depth", "patience", "min_child_weight"}, where);
  GbtModelConfig c;
  c.eta = j.value("eta", c.eta);
  c.t_first = j.value("t_first", c.t_first);
  c.t_later = j.value("t_later", c.t_later);
  c.depth = j.value("depth", c.depth);
  c.patience = j.value("patience", c.patience);
  c.min_child_weight = j.value("min_child_weight", c.min_child_weight);
  if (!(c.eta > 0) || !std::isfinite(c.eta)) throw ConfigError(where + ": eta must be > 0");
  if (c.t_first < 0 || c.t_later < 0) throw ConfigError(where + ": tree counts must be >= 0");
  if (c.depth < 0) throw ConfigError(where + ": depth must be >= 0");
  if (c.patience < 1) throw ConfigError(where + ": patience must be >= 1");
  if (!(c.min_child_weight >= 0)) throw ConfigError(where + ": min_child_weight must be >= 0");
  return c;
}

inline nlohmann::json gbt_config_to_json(const GbtConfig& c) {
  return {{"occ", gbt_model_config_to_json(c.occ)}, {"rep", gbt_model_config_to_json(c.rep)}};
}

inline GbtConfig gbt_config_from_json(const nlohmann::json& j) {
  check_keys(j, {"occ", "rep"}, "gbt");
  GbtConfig c;
  if (j.contains("occ")) c.occ = gbt_model_config_from_json(j.at("occ"), "gbt.occ");
  if (j.contains("rep")) c.rep = gbt_model_config_from_json(j.at("rep"), "gbt.rep");
  return c;
}

// -------------------------------------------------------------------- mlp

inline MlpModelConfig mlp_model_config_from_json_strict(const nlohmann::json& j,
                                                        const std::string& where) {
  check_keys(j, {"q1", "q2", "activation", "lr", "n_epoch", "batch", "patience"}, where);
  MlpModelConfig c;
  c.q1 = j.value("q1", c.q1);
  c.q2 = j.value("q2", c.q2);
  c.activation = j.value("activation", c.activation);
  c.lr = j.value("lr", c.lr);
  c.n_epoch = j.value("n_epoch", c.n_epoch);
  c.batch = j.value("batch", c.batch);
  c.patience = j.value("patience", c.patience);
  if (c.q1 < 1 || c.q2 < 1) throw ConfigError(where + ": layer widths must be >= 1");
  activation_from_string(c.activation);  // throws on unknown names
  if (!(c.lr > 0) || !std::isfinite(c.lr)) throw ConfigError(where + ": lr must be > 0");
  if (c.n_epoch < 0) throw ConfigError(where + ": n_epoch must be >= 0");
  if (c.batch < 1) throw ConfigError(where + ": batch must be >= 1");
  if (c.patience < 1) throw ConfigError(where + ": patience must be >= 1");
  return c;
}

inline nlohmann::json mlp_config_to_json(const MlpConfig& c) {
  return {{"occ", detail::mlp_model_config_to_json(c.occ)},
          {"rep", detail::mlp_model_config_to_json(c.rep)}};
}

inline MlpConfig mlp_config_from_json(const nlohmann::json& j) {
  check_keys(j, {"occ", "rep"}, "mlp");
  MlpConfig c;
  if (j.contains("occ")) c.occ = mlp_model_config_from_json_strict(j.at("occ"), "mlp.occ");
  if (j.contains("rep")) c.rep = mlp_model_config_from_json_strict(j.at("rep"), "mlp.rep");
  return c;
}

// -------------------------------------------------------------------- glm

inline nlohmann::json glm_options_to_json(const GlmOptions& o) {
  return {{"max_iter", o.max_iter},
          {"score_tol", o.score_tol},
          {"ll_tol", o.ll_tol},
          {"clamp", o.clamp}};
}

inline GlmOptions glm_options_from_json(const nlohmann::json& j) {
  check_keys(j, {"max_iter", "score_tol", "ll_tol", "clamp"}, "glm");
  GlmOptions o;
  o.max_iter = j.value("max_iter", o.max_iter);
  o.score_tol = j.value("score_tol", o.score_tol);
  o.ll_tol = j.value("ll_tol", o.ll_tol);
  o.clamp = j.value("clamp", o.clamp);
  if (o.max_iter < 1) throw ConfigError("glm: max_iter must be >= 1");
  if (!(o.score_tol > 0) || !(o.ll_tol > 0)) throw ConfigError("glm: tolerances must be > 0");
  if (!(o.clamp > 0)) throw ConfigError("glm: clamp must be > 0");
  return o;
}

// ---------------------------------------------------------------- factory

inline nlohmann::json default_learner_config(const std::string& kind) {
  if (kind == "glm") return glm_options_to_json(GlmOptions{});
  if (kind == "gbt") return gbt_config_to_json(GbtConfig{});
  if (kind == "mlp") return mlp_config_to_json(MlpConfig{});
  throw ConfigError("unknown learner kind \"" + kind + "\"");
}

// fresh learner from a (possibly partial) config object
inline std::unique_ptr<Learner> make_learner(const std::string& kind,
                                             const nlohmann::json& config = nlohmann::json::object()) {
  if (kind == "glm") return std::make_unique<GlmLearner>(glm_options_from_json(config));
  if (kind == "gbt") return std::make_unique<GbtLearner>(gbt_config_from_json(config));
  if (kind == "mlp") return std::make_unique<MlpLearner>(mlp_config_from_json(config));
  throw ConfigError("unknown learner kind \"" + kind + "\"");
}

// fitted learner from a serialized model, dispatched on its "kind" field
inline std::unique_ptr<Learner> learner_from_json(const nlohmann::json& model) {
  const std::string kind = model.at("kind").get<std::string>();
  if (kind == "glm") return GlmLearner::from_json(model);
  if (kind == "gbt") return GbtLearner::from_json(model);
  if (kind == "mlp") return MlpLearner::from_json(model);
  throw ConfigError("unknown learner kind \"" + kind + "\"");
}

}  // namespace nowcast
