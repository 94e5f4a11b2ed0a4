#pragma once
// Random grid search over learner hyperparameters.  Configurations are drawn
// uniformly without replacement from the product space of the value lists,
// each is scored by the best val2 observed log-likelihood reached by run_em,
// and ties go to the earliest sampled configuration.

#include "nowcast/config.hpp"
#include "nowcast/em.hpp"
#include "nowcast/simulate.hpp"

#include <json.hpp>

#include <chrono>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace nowcast {

// value lists keyed by dotted config paths, e.g. "occ.eta" -> [0.01, 0.05]
using Grid = std::map<std::string, std::vector<nlohmann::json>>;

inline Grid grid_from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.empty()) throw ConfigError("grid must be a non-empty object");
  Grid g;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!it.value().is_array() || it.value().empty())
      throw ConfigError("grid entry \"" + it.key() + "\" must be a non-empty array");
    g[it.key()] = std::vector<nlohmann::json>(it.value().begin(), it.value().end());
  }
  return g;
}

// product-space size, saturating well above any usable budget
inline std::uint64_t grid_size(const Grid& grid) {
  std::uint64_t total = 1;
  const std::uint64_t cap = std::uint64_t(1) << 62;
  for (const auto& [key, values] : grid) {
    (void)key;
    const std::uint64_t m = values.size();
    if (total > cap / m) return cap;
    total *= m;
  }
  return total;
}

// mixed-radix decode in canonical (lexicographic) key order
inline nlohmann::json grid_assignment(const Grid& grid, std::uint64_t index) {
  nlohmann::json a = nlohmann::json::object();
  for (const auto& [key, values] : grid) {
    const std::uint64_t m = values.size();
    a[key] = values[static_cast<size_t>(index % m)];
    index /= m;
  }
  return a;
}

// `budget` distinct assignments, uniform over the product space
inline std::vector<nlohmann::json> sample_grid(const Grid& grid, int budget,
                                               std::uint64_t seed) {
  if (budget < 1) throw ConfigError("budget must be >= 1");
  if (grid.empty()) throw ConfigError("grid must be non-empty");
  const std::uint64_t total = grid_size(grid);
  const std::uint64_t take = std::min<std::uint64_t>(static_cast<std::uint64_t>(budget), total);
  RandomStream rs(seed);
  std::vector<nlohmann::json> out;
  out.reserve(static_cast<size_t>(take));
  if (total <= (std::uint64_t(1) << 22)) {
    // partial Fisher-Yates over the materialized index range
    std::vector<std::uint64_t> idx(static_cast<size_t>(total));
    for (std::uint64_t i = 0; i < total; ++i) idx[static_cast<size_t>(i)] = i;
    for (std::uint64_t i = 0; i < take; ++i) {
      const std::uint64_t j = static_cast<std::uint64_t>(
          rs.uniform_int(static_cast<int>(i), static_cast<int>(total - 1)));
      std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
      out.push_back(grid_assignment(grid, idx[static_cast<size_t>(i)]));
    }
  } else {
    // coordinate-wise draws are uniform over the product; reject repeats
    std::unordered_set<std::string> seen;
    std::uint64_t attempts = 0, cap = 1000 * take + 100000;
    while (out.size() < take) {
      if (++attempts > cap) throw NumericError("grid sampling failed to find fresh points");
      nlohmann::json a = nlohmann::json::object();
      for (const auto& [key, values] : grid)
        a[key] = values[static_cast<size_t>(
            rs.uniform_int(0, static_cast<int>(values.size()) - 1))];
      if (seen.insert(a.dump()).second) out.push_back(std::move(a));
    }
  }
  return out;
}

// dotted-path override onto a config object; the path must already exist
inline void apply_override(nlohmann::json& config, const std::string& path,
                           const nlohmann::json& value) {
  nlohmann::json* node = &config;
  size_t start = 0;
  for (size_t dot = path.find('.'); dot != std::string::npos;
       start = dot + 1, dot = path.find('.', start)) {
    const std::string head = path.substr(start, dot - start);
    if (!node->contains(head))
      throw ConfigError("grid key \"" + path + "\" does not match any config field");
    node = &(*node)[head];
  }
  const std::string leaf = path.substr(start);
  if (!node->is_object() || !node->contains(leaf))
    throw ConfigError("grid key \"" + path + "\" does not match any config field");
  (*node)[leaf] = value;
}

struct TuneEntry {
  nlohmann::json assignment;  // the sampled grid point
  nlohmann::json config;      // full learner config after overrides
  double val2_ll = -std::numeric_limits<double>::infinity();
  double seconds = 0;
  bool failed = false;
};

struct TuneResult {
  nlohmann::json best_config;
  nlohmann::json best_assignment;
  int best_index = -1;  // position in the sample order
  double best_score = -std::numeric_limits<double>::infinity();
  std::vector<TuneEntry> table;
};

inline TuneResult random_grid_search(const Dataset& data, const Grid& grid, int budget,
                                     std::uint64_t seed, const std::string& learner_kind,
                                     const nlohmann::json& base_config = nlohmann::json::object(),
                                     const EmOptions& em = {}) {
  const auto samples = sample_grid(grid, budget, seed);
  TuneResult result;
  result.table.reserve(samples.size());
  for (const auto& assignment : samples) {
    TuneEntry entry;
    entry.assignment = assignment;
    nlohmann::json cfg = default_learner_config(learner_kind);
    if (base_config.is_object() && !base_config.empty()) cfg.merge_patch(base_config);
    for (auto it = assignment.begin(); it != assignment.end(); ++it)
      apply_override(cfg, it.key(), it.value());
    entry.config = cfg;
    auto learner = make_learner(learner_kind, cfg);  // validates before timing
    const auto t0 = std::chrono::steady_clock::now();
    try {
      FitResult fit = run_em(data, *learner, em);
      entry.val2_ll = fit.ll_trace[static_cast<size_t>(fit.best_iteration - 1)];
    } catch (const NumericError&) {
      entry.failed = true;  // a diverging configuration loses; it is not fatal
    }
    entry.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!entry.failed && entry.val2_ll > result.best_score) {
      result.best_score = entry.val2_ll;
      result.best_index = static_cast<int>(result.table.size());
      result.best_config = entry.config;
      result.best_assignment = entry.assignment;
    }
    result.table.push_back(std::move(entry));
  }
  if (result.best_index < 0) throw NumericError("every configuration failed to fit");
  return result;
}

// ------------------------------------------------------------- score table

inline std::string csv_quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    out += c;
    if (c == '"') out += '"';
  }
  out += '"';
  return out;
}

inline std::string score_table_csv(const TuneResult& r) {
  std::string out = "config,val2_ll,wall_seconds\n";
  for (const auto& e : r.table) {
    out += csv_quote(e.config.dump());
    out += ',';
    out += e.failed ? "nan" : format_double(e.val2_ll);
    out += ',';
    out += format_double(e.seconds);
    out += '\n';
  }
  return out;
}

}  // namespace nowcast
