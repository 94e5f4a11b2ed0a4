#pragma once
// File formats: dataset/truth/nowcast CSVs with exact numeric round-trips,
// model and run-config JSON with strict schemas, case-level ingestion with
// calendar dates, and atomic writes.

#include "nowcast/config.hpp"
#include "nowcast/em.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace nowcast {

// ----------------------------------------------------------------- files

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw DataError("cannot read " + path);
  return text;
}

// full content to a sibling temp file, then rename into place
inline void write_file_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw DataError("cannot write " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError("cannot move " + tmp + " to " + path + ": " + ec.message());
}

// ------------------------------------------------------------- CSV layer

inline bool csv_needs_quotes(std::string_view s) {
  for (char c : s)
    if (c == ',' || c == '"' || c == '\n' || c == '\r') return true;
  return false;
}

inline std::string csv_field(std::string_view s) {
  if (!csv_needs_quotes(s)) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    out += c;
    if (c == '"') out += '"';
  }
  out += '"';
  return out;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<long> line_of;  // source line of each data row

  Index column(const std::string& name) const {
    for (size_t c = 0; c < header.size(); ++c)
      if (header[c] == name) return static_cast<Index>(c);
    throw DataError("missing column \"" + name + "\"");
  }
};

// RFC-4180 style: quoted fields may hold commas, newlines, doubled quotes;
// bare \r before \n is stripped.  Blank trailing lines are ignored.
inline CsvTable parse_csv(std::string_view text) {
  CsvTable t;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, any = false;
  long line = 1, row_line = 1;
  auto end_field = [&]() {
    row.push_back(std::move(field));
    field.clear();
  };
  auto end_row = [&]() {
    end_field();
    if (t.header.empty()) {
      t.header = std::move(row);
    } else {
      if (row.size() != t.header.size())
        throw DataError("line " + std::to_string(row_line) + ": expected " +
                        std::to_string(t.header.size()) + " fields, got " +
                        std::to_string(row.size()));
      t.rows.push_back(std::move(row));
      t.line_of.push_back(row_line);
    }
    row.clear();
    any = false;
    row_line = line;
  };
  for (size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
        if (c == '\n') ++line;
      }
    } else if (c == '"' && field.empty()) {
      quoted = true;
      any = true;
    } else if (c == ',') {
      end_field();
      any = true;
    } else if (c == '\n') {
      ++line;
      if (!field.empty() && field.back() == '\r') field.pop_back();
      if (any || !field.empty() || !row.empty()) end_row();
      row_line = line;
    } else {
      field += c;
      any = true;
    }
  }
  if (quoted) throw DataError("line " + std::to_string(row_line) + ": unterminated quote");
  if (any || !field.empty() || !row.empty()) end_row();
  if (t.header.empty()) throw DataError("empty CSV input");
  return t;
}

inline long parse_long(std::string_view s, long line) {
  long v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw DataError("line " + std::to_string(line) + ": bad integer \"" + std::string(s) + "\"");
  return v;
}

inline double parse_double_at(std::string_view s, long line) {
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw DataError("line " + std::to_string(line) + ": bad number \"" + std::string(s) + "\"");
  return v;
}

// ----------------------------------------------------------- dataset CSV

// header: entity_id,occ_period,tau_i,n_1..n_d,<features>; cells beyond a
// record's horizon stay empty
inline std::string write_dataset_csv(const Dataset& data) {
  std::string out = "entity_id,occ_period,tau_i";
  const Index d = data.d();
  for (Index j = 1; j <= d; ++j) out += ",n_" + std::to_string(j);
  for (const auto& name : data.schema.names) out += "," + csv_field(name);
  out += '\n';
  for (Index i = 0; i < data.n(); ++i) {
    out += csv_field(data.ids[static_cast<size_t>(i)]);
    out += ',' + std::to_string(data.occ(i));
    out += ',' + std::to_string(data.tau_i(i));
    for (Index j = 0; j < d; ++j) {
      out += ',';
      if (j < data.tau_i(i)) out += format_double(data.counts(i, j));
    }
    for (Index c = 0; c < data.X.cols(); ++c) out += ',' + format_double(data.X(i, c));
    out += '\n';
  }
  return out;
}

inline Dataset read_dataset_csv(const std::string& text) {
  CsvTable t = parse_csv(text);
  if (t.header.size() < 4 || t.header[0] != "entity_id" || t.header[1] != "occ_period" ||
      t.header[2] != "tau_i" || t.header[3] != "n_1")
    throw DataError("dataset header must start with entity_id,occ_period,tau_i,n_1");
  size_t col = 3;
  while (col < t.header.size() && t.header[col] == "n_" + std::to_string(col - 2)) ++col;
  const Index d = static_cast<Index>(col - 3);
  std::vector<std::string> features(t.header.begin() + static_cast<long>(col), t.header.end());

  const Index n = static_cast<Index>(t.rows.size());
  Dataset data;
  data.ids.resize(static_cast<size_t>(n));
  data.occ.resize(n);
  data.tau_i.resize(n);
  data.counts = Matrix::Zero(n, d);
  data.X.resize(n, static_cast<Index>(features.size()));
  int max_horizon = 0;
  for (Index i = 0; i < n; ++i) {
    const auto& row = t.rows[static_cast<size_t>(i)];
    const long line = t.line_of[static_cast<size_t>(i)];
    data.ids[static_cast<size_t>(i)] = row[0];
    data.occ(i) = static_cast<int>(parse_long(row[1], line));
    data.tau_i(i) = static_cast<int>(parse_long(row[2], line));
    if (data.tau_i(i) < 1 || data.tau_i(i) > d)
      throw DataError("line " + std::to_string(line) + ": tau_i out of range");
    for (Index j = 0; j < d; ++j) {
      const std::string& cell = row[static_cast<size_t>(3 + j)];
      if (j < data.tau_i(i)) {
        data.counts(i, j) = parse_double_at(cell, line);
      } else if (!cell.empty()) {
        throw DataError("line " + std::to_string(line) + ": observed count beyond tau_i");
      }
    }
    for (size_t c = 0; c < features.size(); ++c)
      data.X(i, static_cast<Index>(c)) = parse_double_at(row[3 + static_cast<size_t>(d) + c], line);
    max_horizon = std::max(max_horizon, data.occ(i) + data.tau_i(i) - 1);
  }
  data.schema = FeatureSchema::infer(std::move(features), n > 0 ? &data.X : nullptr);
  // the smallest present time consistent with every record; exact when any
  // record is still partially observed
  data.tau = n > 0 ? max_horizon : 0;
  data.validate();
  return data;
}

// ------------------------------------------------------------- truth CSV

struct TruthTable {
  std::vector<std::string> ids;
  ParameterEstimates est;
};

inline std::string write_truth_csv(const std::vector<std::string>& ids,
                                   const ParameterEstimates& est) {
  if (static_cast<Index>(ids.size()) != est.n())
    throw DataError("truth table id count differs from estimates");
  std::string out = "entity_id,lambda";
  for (Index j = 1; j <= est.d(); ++j) out += ",p_" + std::to_string(j);
  out += '\n';
  for (Index i = 0; i < est.n(); ++i) {
    out += csv_field(ids[static_cast<size_t>(i)]);
    out += ',' + format_double(est.lambda(i));
    for (Index j = 0; j < est.d(); ++j) out += ',' + format_double(est.p(i, j));
    out += '\n';
  }
  return out;
}

inline TruthTable read_truth_csv(const std::string& text) {
  CsvTable t = parse_csv(text);
  if (t.header.size() < 3 || t.header[0] != "entity_id" || t.header[1] != "lambda" ||
      t.header[2] != "p_1")
    throw DataError("truth header must start with entity_id,lambda,p_1");
  for (size_t c = 2; c < t.header.size(); ++c)
    if (t.header[c] != "p_" + std::to_string(c - 1))
      throw DataError("truth header has non-contiguous p columns");
  const Index d = static_cast<Index>(t.header.size() - 2);
  const Index n = static_cast<Index>(t.rows.size());
  TruthTable out;
  out.ids.resize(static_cast<size_t>(n));
  out.est.lambda.resize(n);
  out.est.p.resize(n, d);
  for (Index i = 0; i < n; ++i) {
    const auto& row = t.rows[static_cast<size_t>(i)];
    const long line = t.line_of[static_cast<size_t>(i)];
    out.ids[static_cast<size_t>(i)] = row[0];
    out.est.lambda(i) = parse_double_at(row[1], line);
    for (Index j = 0; j < d; ++j)
      out.est.p(i, j) = parse_double_at(row[static_cast<size_t>(2 + j)], line);
  }
  return out;
}

// ----------------------------------------------------------- nowcast CSV

inline std::string write_nowcast_csv(const Dataset& data, const NowcastResult& nc) {
  std::string out = "entity_id,occ_period,delay,expected\n";
  for (const NowcastCell& c : nc.cells) {
    out += csv_field(data.ids[static_cast<size_t>(c.row)]);
    out += ',' + std::to_string(data.occ(c.row));
    out += ',' + std::to_string(c.delay);
    out += ',' + format_double(c.expected);
    out += '\n';
  }
  return out;
}

// ------------------------------------------------------------ model JSON

inline std::string write_model_json(const Learner& learner) {
  nlohmann::json j{{"schema_version", 1}, {"model", learner.to_json()}};
  return j.dump(2) + "\n";
}

inline std::unique_ptr<Learner> read_model_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) throw DataError("model file is not valid JSON");
  check_keys(j, {"schema_version", "model"}, "model file");
  if (!j.contains("schema_version") || j.at("schema_version") != 1)
    throw ConfigError("model file: unsupported schema_version");
  if (!j.contains("model")) throw ConfigError("model file: missing \"model\"");
  return learner_from_json(j.at("model"));
}

// ------------------------------------------------------------ run config

struct RunConfig {
  std::string learner = "glm";
  EmOptions em;
  std::array<double, 3> split_fractions{0.64, 0.16, 0.20};
  std::uint64_t split_seed = 1;
  nlohmann::json learner_config = nlohmann::json::object();

  nlohmann::json to_json() const {
    nlohmann::json j{{"schema_version", 1},
                     {"learner", learner},
                     {"em", {{"max_iter", em.max_iter}, {"patience", em.patience}, {"seed", em.seed}}},
                     {"split",
                      {{"fractions", {split_fractions[0], split_fractions[1], split_fractions[2]}},
                       {"seed", split_seed}}}};
    j[learner] = learner_config.is_null() ? default_learner_config(learner) : learner_config;
    return j;
  }
};

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  if (!j.contains("schema_version") || j.at("schema_version") != 1)
    throw ConfigError("run config: unsupported schema_version");
  RunConfig c;
  if (!j.contains("learner")) throw ConfigError("run config: missing \"learner\"");
  c.learner = j.at("learner").get<std::string>();
  if (c.learner != "glm" && c.learner != "gbt" && c.learner != "mlp")
    throw ConfigError("run config: unknown learner \"" + c.learner + "\"");
  check_keys(j, {"schema_version", "learner", "em", "split", c.learner}, "run config");
  if (j.contains("em")) {
    const auto& e = j.at("em");
    check_keys(e, {"max_iter", "patience", "seed"}, "run config em");
    c.em.max_iter = e.value("max_iter", c.em.max_iter);
    c.em.patience = e.value("patience", c.em.patience);
    c.em.seed = e.value("seed", c.em.seed);
    if (c.em.max_iter < 1) throw ConfigError("run config: em.max_iter must be >= 1");
    if (c.em.patience < 1) throw ConfigError("run config: em.patience must be >= 1");
  }
  if (j.contains("split")) {
    const auto& s = j.at("split");
    check_keys(s, {"fractions", "seed"}, "run config split");
    if (s.contains("fractions")) {
      const auto& f = s.at("fractions");
      if (!f.is_array() || f.size() != 3)
        throw ConfigError("run config: split.fractions must have 3 entries");
      for (int k = 0; k < 3; ++k) c.split_fractions[static_cast<size_t>(k)] = f.at(k).get<double>();
    }
    c.split_seed = s.value("seed", c.split_seed);
  }
  c.learner_config = j.contains(c.learner) ? j.at(c.learner) : nlohmann::json::object();
  make_learner(c.learner, c.learner_config);  // validate hyperparameters now
  return c;
}

// ------------------------------------------------------------- EM traces

inline std::string trace_to_jsonl(const std::vector<EmTraceRecord>& trace) {
  std::string out;
  for (const auto& r : trace) out += r.to_json().dump() + "\n";
  return out;
}

// ----------------------------------------------------------------- dates

// days since 1970-01-01 for a proleptic Gregorian date
inline long days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const long era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy =
      static_cast<unsigned>((153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1);
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<long>(doe) - 719468;
}

// strict ISO-8601 calendar date -> days since 1970-01-01
inline long parse_date(std::string_view s) {
  auto bad = [&]() { return DataError("bad date \"" + std::string(s) + "\""); };
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') throw bad();
  for (size_t i : {0u, 1u, 2u, 3u, 5u, 6u, 8u, 9u})
    if (s[i] < '0' || s[i] > '9') throw bad();
  const int y = (s[0] - '0') * 1000 + (s[1] - '0') * 100 + (s[2] - '0') * 10 + (s[3] - '0');
  const int m = (s[5] - '0') * 10 + (s[6] - '0');
  const int d = (s[8] - '0') * 10 + (s[9] - '0');
  if (m < 1 || m > 12 || d < 1) throw bad();
  static constexpr int len[12] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  const bool leap = (y % 4 == 0 && y % 100 != 0) || y % 400 == 0;
  if (d > (m == 2 && leap ? 29 : len[m - 1])) throw bad();
  return days_from_civil(y, m, d);
}

// 1-based day index of `date` relative to the epoch date
inline int day_index(std::string_view date, std::string_view epoch) {
  return static_cast<int>(parse_date(date) - parse_date(epoch)) + 1;
}

// ------------------------------------------------------- case aggregation

struct AggregateOptions {
  int d = 0;                              // number of delay classes
  int tau = 0;                            // present day index; <= 0: no censoring
  std::string epoch;                      // calendar date of day 1
  std::vector<std::string> entity_keys;   // empty -> one record per case
};

struct AggregateResult {
  Dataset data;
  long dropped = 0;    // delay beyond d
  long censored = 0;   // reported after the present time
};

// case rows (onset, report, covariates) -> count-vector dataset
inline AggregateResult aggregate_cases(const std::string& csv_text,
                                       const AggregateOptions& opt) {
  if (opt.d < 1) throw ConfigError("aggregate_cases: d must be >= 1");
  if (opt.epoch.empty()) throw ConfigError("aggregate_cases: epoch date required");
  const long epoch_days = parse_date(opt.epoch);
  CsvTable t = parse_csv(csv_text);
  const Index onset_col = t.column("onset");
  const Index report_col = t.column("report");

  const bool individual = opt.entity_keys.empty();
  std::vector<Index> feature_cols;
  std::vector<std::string> feature_names;
  if (individual) {
    for (size_t c = 0; c < t.header.size(); ++c)
      if (static_cast<Index>(c) != onset_col && static_cast<Index>(c) != report_col) {
        feature_cols.push_back(static_cast<Index>(c));
        feature_names.push_back(t.header[c]);
      }
  } else {
    for (const auto& k : opt.entity_keys) {
      feature_cols.push_back(t.column(k));
      feature_names.push_back(k);
    }
  }

  struct Record {
    std::string id;
    int occ = 0;
    std::vector<double> x;
    std::vector<double> counts;
  };
  std::vector<Record> records;
  std::map<std::pair<std::string, int>, size_t> index;  // (group key, onset) -> record
  AggregateResult out;

  for (size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const long line = t.line_of[r];
    const long onset_days = parse_date(row[static_cast<size_t>(onset_col)]);
    const long report_days = parse_date(row[static_cast<size_t>(report_col)]);
    if (report_days < onset_days)
      throw DataError("line " + std::to_string(line) + ": report precedes onset");
    const int onset = static_cast<int>(onset_days - epoch_days) + 1;
    const int report = static_cast<int>(report_days - epoch_days) + 1;
    if (onset < 1)
      throw DataError("line " + std::to_string(line) + ": onset before the epoch date");
    if (opt.tau > 0 && onset > opt.tau)
      throw DataError("line " + std::to_string(line) + ": onset after the present time");
    const long delay = report - onset + 1;  // 1-based delay class
    if (delay > opt.d) {
      ++out.dropped;
      continue;
    }
    const bool censored = opt.tau > 0 && report > opt.tau;
    if (censored) ++out.censored;

    std::vector<double> x(feature_cols.size());
    std::string key;
    for (size_t c = 0; c < feature_cols.size(); ++c) {
      const std::string& cell = row[static_cast<size_t>(feature_cols[c])];
      x[c] = parse_double_at(cell, line);
      if (!individual) key += (c ? "|" : "") + cell;
    }
    size_t rec;
    if (individual) {
      rec = records.size();
      records.push_back({std::to_string(rec + 1), onset, std::move(x),
                         std::vector<double>(static_cast<size_t>(opt.d), 0.0)});
    } else {
      auto [it, fresh] = index.try_emplace({key, onset}, records.size());
      if (fresh)
        records.push_back({key, onset, std::move(x),
                           std::vector<double>(static_cast<size_t>(opt.d), 0.0)});
      rec = it->second;
    }
    if (!censored) records[rec].counts[static_cast<size_t>(delay - 1)] += 1.0;
  }

  Dataset& data = out.data;
  const Index n = static_cast<Index>(records.size());
  data.ids.resize(static_cast<size_t>(n));
  data.occ.resize(n);
  data.tau_i.resize(n);
  data.counts = Matrix::Zero(n, opt.d);
  data.X.resize(n, static_cast<Index>(feature_names.size()));
  data.tau = opt.tau > 0 ? opt.tau : 0;
  for (Index i = 0; i < n; ++i) {
    const Record& rec = records[static_cast<size_t>(i)];
    data.ids[static_cast<size_t>(i)] = rec.id;
    data.occ(i) = rec.occ;
    data.tau_i(i) = opt.tau > 0 ? compute_tau(rec.occ, opt.tau, opt.d) : opt.d;
    for (Index j = 0; j < opt.d; ++j) data.counts(i, j) = rec.counts[static_cast<size_t>(j)];
    for (size_t c = 0; c < rec.x.size(); ++c) data.X(i, static_cast<Index>(c)) = rec.x[c];
  }
  data.schema = FeatureSchema::infer(std::move(feature_names), n > 0 ? &data.X : nullptr);
  data.validate();
  return out;
}

}  // namespace nowcast
