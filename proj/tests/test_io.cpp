#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <nowcast/io.hpp>
#include <nowcast/simulate.hpp>

#include "helpers.hpp"

#include <cstdio>
#include <filesystem>

using namespace nowcast;
using namespace testutil;

TEST_CASE("csv fields quote only when needed and round-trip") {
  CHECK(csv_field("plain") == "plain");
  CHECK(csv_field("with,comma") == "\"with,comma\"");
  CHECK(csv_field("say \"hi\"") == "\"say \"\"hi\"\"\"");
  CsvTable t = parse_csv("a,b\n\"x,y\",\"q\"\"q\"\n");
  REQUIRE(t.rows.size() == 1);
  CHECK(t.rows[0][0] == "x,y");
  CHECK(t.rows[0][1] == "q\"q");
  CHECK(t.line_of[0] == 2);
  // CRLF and missing trailing newline both parse
  CsvTable u = parse_csv("a,b\r\n1,2\r\n3,4");
  REQUIRE(u.rows.size() == 2);
  CHECK(u.rows[1][1] == "4");
  CHECK_THROWS_AS(parse_csv("a,b\n1\n"), DataError);
  CHECK_THROWS_AS(parse_csv("a,b\n\"1,2\n"), DataError);
  CHECK_THROWS_AS(parse_csv(""), DataError);
}

TEST_CASE("dataset csv round-trips byte for byte") {
  auto sim = simulate_dataset(SimSpec::spec1(), 100, 13);
  std::string text = write_dataset_csv(sim.data);
  Dataset back = read_dataset_csv(text);
  CHECK(write_dataset_csv(back) == text);
  CHECK(back.n() == sim.data.n());
  CHECK(back.d() == sim.data.d());
  CHECK(back.tau == 21);
  CHECK(back.ids == sim.data.ids);
  CHECK((back.occ.array() == sim.data.occ.array()).all());
  CHECK((back.tau_i.array() == sim.data.tau_i.array()).all());
  CHECK((back.counts.array() == sim.data.counts.array()).all());
  CHECK((back.X.array() == sim.data.X.array()).all());
  CHECK(back.schema.names == sim.data.schema.names);
  REQUIRE(back.schema.groups.size() == sim.data.schema.groups.size());
  for (size_t g = 0; g < back.schema.groups.size(); ++g)
    CHECK(back.schema.groups[g].columns == sim.data.schema.groups[g].columns);
}

TEST_CASE("dataset csv reader enforces the cell contract") {
  const std::string head = "entity_id,occ_period,tau_i,n_1,n_2,n_3,x2\n";
  Dataset d = read_dataset_csv(head + "a,3,2,3,0.5,,7\nb,2,3,1,0,2,-1.5\n");
  CHECK(d.n() == 2);
  CHECK(d.counts(0, 1) == 0.5);
  CHECK(d.counts(0, 2) == 0.0);  // censored cell reads as zero
  CHECK(d.X(1, 0) == -1.5);
  CHECK(d.tau == 4);  // both records agree on present time 4
  CHECK_THROWS_AS(read_dataset_csv(head + "a,3,2,3,0.5,9,7\n"), DataError);   // count beyond tau_i
  CHECK_THROWS_AS(read_dataset_csv(head + "a,3,4,3,0.5,,7\n"), DataError);    // tau_i > d
  CHECK_THROWS_AS(read_dataset_csv(head + "a,3,2,3,zz,,7\n"), DataError);     // bad number
  CHECK_THROWS_AS(read_dataset_csv(head + "a,x,2,3,0.5,,7\n"), DataError);    // bad integer
  CHECK_THROWS_AS(read_dataset_csv("id,occ_period,tau_i,n_1\nA,1,1,0\n"), DataError);
  const std::string dup = "entity_id,occ_period,tau_i,n_1,x2,x2\n";
  CHECK_THROWS_AS(read_dataset_csv(dup + "a,1,1,3,1,2\n"), DataError);
}

TEST_CASE("truth csv round-trips byte for byte") {
  auto sim = simulate_dataset(SimSpec::spec1(), 40, 19);
  std::string text = write_truth_csv(sim.data.ids, sim.truth);
  TruthTable back = read_truth_csv(text);
  CHECK(write_truth_csv(back.ids, back.est) == text);
  CHECK(back.ids == sim.data.ids);
  CHECK((back.est.lambda.array() == sim.truth.lambda.array()).all());
  CHECK((back.est.p.array() == sim.truth.p.array()).all());
  CHECK_THROWS_AS(read_truth_csv("entity_id,lambda,p_1,p_3\na,1,0.5,0.5\n"), DataError);
}

TEST_CASE("nowcast csv lists one row per unobserved cell") {
  Dataset data = tiny_dataset();  // one unobserved cell: record b, delay 2
  ParameterEstimates est = initialize_estimates(data);
  NowcastResult nc = nowcast_unreported(est, data);
  std::string csv = write_nowcast_csv(data, nc);
  std::string expected = "entity_id,occ_period,delay,expected\n";
  for (const auto& c : nc.cells)
    expected += data.ids[static_cast<size_t>(c.row)] + "," + std::to_string(data.occ(c.row)) +
                "," + std::to_string(c.delay) + "," + format_double(c.expected) + "\n";
  CHECK(csv == expected);
  Index expected_rows = 0;
  for (Index i = 0; i < data.n(); ++i) expected_rows += data.d() - data.tau_i(i);
  CHECK(static_cast<Index>(nc.cells.size()) == expected_rows);
}

TEST_CASE("model files round-trip through the strict wrapper") {
  auto sim = simulate_dataset(SimSpec::spec1(), 260, 3);
  assign_splits(sim.data, {0.64, 0.16, 0.20}, 4);
  GbtLearner learner;
  EmOptions opt;
  opt.max_iter = 2;
  opt.patience = 2;
  opt.seed = 8;
  run_em(sim.data, learner, opt);
  std::string text = write_model_json(learner);
  auto back = read_model_json(text);
  CHECK(back->kind() == "gbt");
  ParameterEstimates a = learner.predict(sim.data);
  ParameterEstimates b = back->predict(sim.data);
  CHECK((a.lambda.array() == b.lambda.array()).all());
  CHECK((a.p.array() == b.p.array()).all());

  nlohmann::json j = nlohmann::json::parse(text);
  j["extra"] = 1;
  CHECK_THROWS_AS(read_model_json(j.dump()), ConfigError);
  j.erase("extra");
  j["schema_version"] = 9;
  CHECK_THROWS_AS(read_model_json(j.dump()), ConfigError);
  CHECK_THROWS_AS(read_model_json("not json"), DataError);
}

TEST_CASE("run configs parse strictly with defaults") {
  nlohmann::json j{{"schema_version", 1},
                   {"learner", "gbt"},
                   {"em", {{"max_iter", 40}, {"patience", 5}, {"seed", 11}}},
                   {"split", {{"fractions", {0.6, 0.2, 0.2}}, {"seed", 2}}},
                   {"gbt", {{"occ", {{"eta", 0.05}}}}}};
  RunConfig c = run_config_from_json(j);
  CHECK(c.learner == "gbt");
  CHECK(c.em.max_iter == 40);
  CHECK(c.em.patience == 5);
  CHECK(c.em.seed == 11);
  CHECK(c.split_fractions[0] == 0.6);
  CHECK(c.split_seed == 2);
  CHECK(c.learner_config["occ"]["eta"] == 0.05);
  // defaults fill when blocks are omitted
  RunConfig d = run_config_from_json({{"schema_version", 1}, {"learner", "glm"}});
  CHECK(d.em.max_iter == 100);
  CHECK(d.em.patience == 10);
  CHECK(d.split_fractions[2] == 0.20);

  CHECK_THROWS_AS(run_config_from_json({{"learner", "glm"}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json({{"schema_version", 2}, {"learner", "glm"}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json({{"schema_version", 1}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json({{"schema_version", 1}, {"learner", "tree"}}), ConfigError);
  nlohmann::json wrong = {{"schema_version", 1}, {"learner", "glm"}, {"gbt", {}}};
  CHECK_THROWS_AS(run_config_from_json(wrong), ConfigError);
  nlohmann::json typo = {{"schema_version", 1}, {"learner", "glm"}, {"emm", {}}};
  CHECK_THROWS_AS(run_config_from_json(typo), ConfigError);
  nlohmann::json bad_hyper = {{"schema_version", 1},
                              {"learner", "mlp"},
                              {"mlp", {{"occ", {{"lr", -1.0}}}}}};
  CHECK_THROWS_AS(run_config_from_json(bad_hyper), ConfigError);
  // round-trip through to_json
  RunConfig again = run_config_from_json(c.to_json());
  CHECK(again.learner == c.learner);
  CHECK(again.em.max_iter == c.em.max_iter);
  CHECK(again.learner_config == c.learner_config);
}

TEST_CASE("traces serialize as one json object per line") {
  std::vector<EmTraceRecord> trace(2);
  trace[0].iteration = 1;
  trace[0].train_ll = -10.5;
  trace[0].val2_ll = -3.25;
  trace[1].iteration = 2;
  trace[1].train_ll = -9.5;
  trace[1].val2_ll = -3.0;
  std::string text = trace_to_jsonl(trace);
  CHECK(std::count(text.begin(), text.end(), '\n') == 2);
  auto first = nlohmann::json::parse(text.substr(0, text.find('\n')));
  CHECK(first["iteration"] == 1);
  CHECK(first["val2_ll"] == -3.25);
}

TEST_CASE("dates map to day indices through the civil calendar") {
  CHECK(day_index("2022-04-11", "2022-04-11") == 1);
  CHECK(day_index("2022-04-21", "2022-04-11") == 11);
  CHECK(day_index("2022-05-01", "2022-04-11") == 21);
  CHECK(day_index("2022-04-10", "2022-04-11") == 0);
  CHECK(parse_date("2024-02-29") - parse_date("2024-02-28") == 1);  // leap day
  CHECK(parse_date("2021-01-01") - parse_date("2020-12-31") == 1);
  CHECK(parse_date("1970-01-01") == 0);
  CHECK_THROWS_AS(parse_date("2023-02-29"), DataError);
  CHECK_THROWS_AS(parse_date("2023-13-01"), DataError);
  CHECK_THROWS_AS(parse_date("2023-00-10"), DataError);
  CHECK_THROWS_AS(parse_date("2023-1-01"), DataError);
  CHECK_THROWS_AS(parse_date("20230101"), DataError);
  CHECK_THROWS_AS(parse_date("2023-04-31"), DataError);
}

TEST_CASE("individual-mode ingestion makes one record per case") {
  AggregateOptions opt;
  opt.d = 22;
  opt.tau = 30;
  opt.epoch = "2020-03-01";
  // onset day 5 = 2020-03-05, report day 7 = 2020-03-07 -> delay class 3
  const std::string cases =
      "onset,report,age,region_1\n"
      "2020-03-05,2020-03-07,34,1\n";
  AggregateResult r = aggregate_cases(cases, opt);
  REQUIRE(r.data.n() == 1);
  CHECK(r.data.occ(0) == 5);
  CHECK(r.data.tau_i(0) == 22);  // min(22, 30 - 5 + 1) = 22
  CHECK(r.data.counts(0, 2) == 1.0);
  CHECK(r.data.counts.row(0).sum() == 1.0);
  CHECK(r.data.X(0, 0) == 34.0);
  CHECK(r.data.X(0, 1) == 1.0);
  CHECK(r.data.schema.names == std::vector<std::string>{"age", "region_1"});
  CHECK(r.dropped == 0);
  CHECK(r.censored == 0);
}

TEST_CASE("long delays drop and late reports censor") {
  AggregateOptions opt;
  opt.d = 22;
  opt.tau = 10;
  opt.epoch = "2020-03-01";
  const std::string cases =
      "onset,report,age\n"
      "2020-03-01,2020-03-26,50\n"   // delay 26 > 22: dropped
      "2020-03-02,2020-03-12,60\n"   // report day 12 > tau 10: censored
      "2020-03-03,2020-03-04,70\n";  // observed, delay 2
  AggregateResult r = aggregate_cases(cases, opt);
  CHECK(r.dropped == 1);
  CHECK(r.censored == 1);
  REQUIRE(r.data.n() == 2);  // dropped case creates no record
  CHECK(r.data.ids[0] == "1");
  CHECK(r.data.occ(0) == 2);
  CHECK(r.data.tau_i(0) == 9);  // min(22, 10 - 2 + 1)
  CHECK(r.data.counts.row(0).sum() == 0.0);  // censored case adds no count
  CHECK(r.data.counts(1, 1) == 1.0);
  // total observed events = rows - dropped - censored
  CHECK(r.data.counts.sum() == 3 - r.dropped - r.censored);
}

TEST_CASE("entity keys group cases into count vectors") {
  AggregateOptions opt;
  opt.d = 5;
  opt.tau = 0;  // fully retrospective: no censoring
  opt.epoch = "2021-06-01";
  opt.entity_keys = {"region_1", "region_2"};
  const std::string cases =
      "onset,report,age,region_1,region_2\n"
      "2021-06-01,2021-06-01,30,1,0\n"
      "2021-06-01,2021-06-03,40,1,0\n"
      "2021-06-01,2021-06-01,55,0,1\n"
      "2021-06-02,2021-06-02,61,1,0\n"
      "2021-06-01,2021-06-09,29,1,0\n";  // delay 9 > 5: dropped
  AggregateResult r = aggregate_cases(cases, opt);
  CHECK(r.dropped == 1);
  REQUIRE(r.data.n() == 3);
  // group (1,0) at onset day 1: two cases at delays 1 and 3
  CHECK(r.data.ids[0] == "1|0");
  CHECK(r.data.counts(0, 0) == 1.0);
  CHECK(r.data.counts(0, 2) == 1.0);
  CHECK(r.data.X(0, 0) == 1.0);
  CHECK(r.data.X(0, 1) == 0.0);
  CHECK(r.data.ids[1] == "0|1");
  CHECK(r.data.ids[2] == "1|0");
  CHECK(r.data.occ(2) == 2);
  CHECK(r.data.tau_i(0) == 5);  // retrospective: every cell observable
  CHECK(r.data.schema.names == std::vector<std::string>{"region_1", "region_2"});
  CHECK(r.data.counts.sum() == 5 - r.dropped);

  // report < onset rejected with its line number
  const std::string bad = "onset,report,age\n2021-06-05,2021-06-02,30\n";
  AggregateOptions opt2;
  opt2.d = 5;
  opt2.epoch = "2021-06-01";
  try {
    aggregate_cases(bad, opt2);
    CHECK(false);
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  CHECK_THROWS_AS(aggregate_cases("onset,age\n2021-06-01,3\n", opt2), DataError);
}

TEST_CASE("atomic writes land complete files") {
  namespace fs = std::filesystem;
  const std::string dir = (fs::temp_directory_path() / "nowcast_io_test").string();
  fs::create_directories(dir);
  const std::string path = dir + "/out.txt";
  write_file_atomic(path, "first\n");
  CHECK(read_file(path) == "first\n");
  write_file_atomic(path, "second\n");
  CHECK(read_file(path) == "second\n");
  CHECK(!fs::exists(path + ".tmp"));
  CHECK_THROWS_AS(read_file(dir + "/missing.txt"), DataError);
  fs::remove_all(dir);
}
