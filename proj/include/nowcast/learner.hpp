#pragma once
// M-step learner abstraction consumed by the EM engine.  A learner owns the
// occurrence score model f_occ and the reporting score model f_rep, refits
// them on completed data each EM iteration, and can snapshot/rollback its
// state so the engine can restore the best iteration.

#include "nowcast/core.hpp"

#include <json.hpp>

#include <memory>
#include <string>

namespace nowcast {

struct MStepContext {
  const Dataset& data;
  const Matrix& completed;                // n x d completed counts
  const std::vector<Index>& train_rows;
  const std::vector<Index>& val1_rows;
  int em_iteration = 1;                   // 1-based
  Vector p0;                              // EM initializer's shared reporting vector
  std::uint64_t seed = 0;
};

class Learner {
 public:
  virtual ~Learner() = default;
  virtual std::string kind() const = 0;
  virtual void m_step(const MStepContext& ctx) = 0;
  virtual ParameterEstimates predict(const Dataset& data) const = 0;
  virtual void snapshot() = 0;
  virtual void rollback() = 0;
  // counters from the most recent m_step (rounds/epochs used, objectives)
  virtual nlohmann::json last_fit_info() const { return nlohmann::json::object(); }
  virtual nlohmann::json to_json() const = 0;
};

}  // namespace nowcast
