#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <thread>

#include "survey_fixtures.hpp"
#include "toongan/survey_server.hpp"

using namespace toongan;
using namespace toongan::survey;
namespace tt = toongan::testing;

namespace {

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("toongan_survey_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::vector<std::string> log_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

}  // namespace

TEST(SurveyDefinition, LoadsFileWithDefaultPrompts) {
  const auto def = load_definition(tt::write_survey(scratch("def") / "s"));
  ASSERT_EQ(def.tasks.size(), 20u);
  EXPECT_EQ(def.question("aesthetic").prompt, "rank the following images according to aesthetic/visual appeal");
  EXPECT_NE(def.question("cartoon").prompt.find("resembles a cartoon (i.e. illustrated photo or anime)"),
            std::string::npos);
  EXPECT_TRUE(std::filesystem::exists(def.tasks[0].images[0].path));
}

TEST(SurveyDefinition, RejectsMalformedDefinitions) {
  const auto path = tt::write_survey(scratch("bad") / "s");
  const json good = json::parse(std::ifstream(path));
  EXPECT_NO_THROW(parse_definition(good));

  json j = good;
  j["tasks"].erase(j["tasks"].begin());
  EXPECT_THROW(parse_definition(j), ConfigError);  // 19 tasks

  j = good;
  j["tasks"][10]["question"] = "aesthetic";
  EXPECT_THROW(parse_definition(j), ConfigError);  // 11 / 9 split

  j = good;
  j["tasks"][3]["images"].erase("ganilla");
  EXPECT_THROW(parse_definition(j), ConfigError);  // two images

  j = good;
  j["tasks"][3]["question"] = "style";
  EXPECT_THROW(parse_definition(j), ConfigError);

  j = good;
  j["tasks"][4]["id"] = "t01";
  EXPECT_THROW(parse_definition(j), ConfigError);

  j = good;
  j["questions"].push_back({{"id", "third"}});
  EXPECT_THROW(parse_definition(j), ConfigError);
}

TEST(SurveySession, GroupsPartsAndShufflesWithinThem) {
  const auto def = load_definition(tt::write_survey(scratch("session") / "s"));
  const Session a = new_session(def, 1, "a"), b = new_session(def, 1, "b"), c = new_session(def, 2, "c");
  ASSERT_EQ(a.tasks.size(), 20u);
  std::set<std::string> ids;
  for (std::size_t i = 0; i < 20; ++i) {
    ids.insert(a.tasks[i].task_id);
    EXPECT_EQ(def.task(a.tasks[i].task_id).question, i < 10 ? "aesthetic" : "cartoon");
    std::vector<std::string> order = a.tasks[i].image_order;
    std::sort(order.begin(), order.end());
    EXPECT_EQ(order, default_models());
  }
  EXPECT_EQ(ids.size(), 20u);

  auto orders = [](const Session& s) {
    std::vector<std::string> out;
    for (const auto& t : s.tasks) out.push_back(t.task_id);
    return out;
  };
  EXPECT_EQ(orders(a), orders(b));
  EXPECT_NE(orders(a), orders(c));

  // Across many seeds every one of the six display orders shows up.
  std::set<std::vector<std::string>> perms;
  for (std::uint64_t seed = 0; seed < 20; ++seed) perms.insert(new_session(def, seed, "x").tasks[0].image_order);
  EXPECT_EQ(perms.size(), 6u);
}

TEST(SurveyRanking, AcceptsOnlyBijections) {
  const auto& m = default_models();
  EXPECT_NO_THROW(validate_ranking({{m[0], 1}, {m[1], 2}, {m[2], 3}}, m));
  EXPECT_NO_THROW(validate_ranking({{m[0], 3}, {m[1], 1}, {m[2], 2}}, m));
  EXPECT_THROW(validate_ranking({{m[0], 1}, {m[1], 1}, {m[2], 2}}, m), ValidationError);
  EXPECT_THROW(validate_ranking({{m[0], 0}, {m[1], 1}, {m[2], 2}}, m), ValidationError);
  EXPECT_THROW(validate_ranking({{m[0], 1}, {m[1], 2}, {m[2], 4}}, m), ValidationError);
  EXPECT_THROW(validate_ranking({{m[0], 1}, {m[1], 2}}, m), ValidationError);
  EXPECT_THROW(validate_ranking({{m[0], 1}, {m[1], 2}, {"other", 3}}, m), ValidationError);
}

TEST(SurveyReport, SmallCases) {
  EXPECT_EQ(mean_rank_report({}).records, 0u);
  EXPECT_EQ(mean_rank_report({}).at("aesthetic", "ours").count, 0u);

  std::vector<RankingRecord> all_first;
  for (int i = 0; i < 7; ++i) all_first.push_back(tt::make_record("p" + std::to_string(i), "t01", "aesthetic", 3, 2, 1));
  EXPECT_EQ(mean_rank_report(all_first).at("aesthetic", "ours").mean(), 1.0);

  const std::vector<RankingRecord> two = {tt::make_record("p1", "t01", "aesthetic", 1, 2, 3),
                                          tt::make_record("p2", "t01", "aesthetic", 2, 1, 3)};
  EXPECT_EQ(mean_rank_report(two).at("aesthetic", "cartoongan").mean(), 1.5);
}

TEST(SurveyReport, LastWriteWinsAndOrderInvariance) {
  std::vector<RankingRecord> log = {tt::make_record("p1", "t01", "aesthetic", 1, 2, 3),
                                    tt::make_record("p2", "t01", "aesthetic", 1, 2, 3),
                                    tt::make_record("p1", "t01", "aesthetic", 3, 2, 1)};
  const auto r = mean_rank_report(log);
  EXPECT_EQ(r.records, 2u);
  EXPECT_EQ(r.at("aesthetic", "cartoongan").mean(), 2.0);

  auto records = tt::random_records(5, 300, 1000);  // practically no resubmissions
  records = effective_records(records);
  const auto base = report_to_json(mean_rank_report(records));
  Rng rng(9);
  for (int k = 0; k < 5; ++k) {
    rng.shuffle(records.begin(), records.end());
    EXPECT_EQ(report_to_json(mean_rank_report(records)), base);
  }
}

TEST(SurveyReport, PublishedRankSumsRenderPublishedMeans) {
  const auto records = tt::published_survey_records();
  ASSERT_EQ(records.size(), 2340u);
  const auto r = mean_rank_report(records);
  EXPECT_EQ(r.records, 2340u);
  const std::map<std::string, std::vector<std::string>> published = {{"aesthetic", {"2.12", "1.64", "2.24"}},
                                                                      {"cartoon", {"1.90", "2.33", "1.78"}}};
  for (const auto& [q, means] : published) {
    for (std::size_t i = 0; i < 3; ++i) {
      const auto& cell = r.at(q, default_models()[i]);
      EXPECT_EQ(cell.count, 1170u);
      EXPECT_EQ(format_rank(cell.mean()), means[i]) << q << " " << cell.model;
    }
  }
  const std::string text = render_report(r);
  EXPECT_NE(text.find("2.12"), std::string::npos);
  EXPECT_NE(text.find("1.78"), std::string::npos);
  EXPECT_NE(text.find("1170"), std::string::npos);
}

TEST(SurveyReport, MeanRanksSumToSixOnCompleteSets) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto r = mean_rank_report(tt::random_records(seed, 400, 30));
    for (const auto& q : r.questions) {
      std::uint64_t sum = 0, count = q.models.front().count;
      double mean_sum = 0.0;
      for (const auto& m : q.models) {
        EXPECT_EQ(m.count, count);
        sum += m.rank_sum;
        mean_sum += m.mean();
      }
      EXPECT_EQ(sum, 6 * count);
      EXPECT_NEAR(mean_sum, 6.0, 1e-12);
    }
  }
}

TEST(SurveyReport, AgreesWithBruteForceOracle) {
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const auto log = tt::random_records(seed, 20 + seed % 180, 1 + seed % 12);
    const auto oracle = tt::report_oracle(log);
    const auto r = mean_rank_report(log);
    for (const auto& q : r.questions) {
      for (const auto& m : q.models) {
        auto it = oracle.find({q.question, m.model});
        const std::pair<std::uint64_t, std::uint64_t> want = it == oracle.end() ? std::pair<std::uint64_t, std::uint64_t>{0, 0} : it->second;
        ASSERT_EQ(m.rank_sum, want.first) << "seed " << seed;
        ASSERT_EQ(m.count, want.second) << "seed " << seed;
      }
    }
  }
}

TEST(SurveyService, SubmitValidatesAndPersists) {
  const auto dir = scratch("service");
  const auto def = load_definition(tt::write_survey(dir / "s"));
  const auto log = dir / "responses.log";
  std::string pid;
  {
    SurveyService svc(def, log);
    const auto s = svc.create_session();
    pid = s->participant_id;
    EXPECT_EQ(pid.size(), 32u);
    const SessionTask& t = s->tasks[0];
    auto ranks = [&](int a, int b, int c) {
      return std::map<std::string, int>{{svc.image_id(t.task_id, t.image_order[0]), a},
                                        {svc.image_id(t.task_id, t.image_order[1]), b},
                                        {svc.image_id(t.task_id, t.image_order[2]), c}};
    };
    EXPECT_EQ(svc.submit(pid, {t.task_id, ranks(1, 2, 3), ""}).answered, 1u);
    EXPECT_THROW(svc.submit(pid, {t.task_id, ranks(1, 1, 2), ""}), ValidationError);
    EXPECT_THROW(svc.submit("nobody", {t.task_id, ranks(1, 2, 3), ""}), NotFoundError);
    EXPECT_THROW(svc.submit(pid, {"t99", ranks(1, 2, 3), ""}), NotFoundError);
    const SessionTask& other = s->tasks[1];
    EXPECT_THROW(svc.submit(pid, {other.task_id, ranks(1, 2, 3), ""}), ValidationError);  // images of another task

    // Resubmission wins; the first answer stays in the log.
    svc.submit(pid, {t.task_id, ranks(3, 2, 1), ""});
    const auto r = svc.report();
    EXPECT_EQ(r.records, 1u);
    EXPECT_EQ(r.at(def.task(t.task_id).question, t.image_order[0]).mean(), 3.0);

    // Nonces make retries idempotent and reject reuse for a different answer.
    EXPECT_FALSE(svc.submit(pid, {other.task_id, {{svc.image_id(other.task_id, "ours"), 1},
                                                 {svc.image_id(other.task_id, "ganilla"), 2},
                                                 {svc.image_id(other.task_id, "cartoongan"), 3}}, "n1"})
                     .duplicate);
    EXPECT_TRUE(svc.submit(pid, {other.task_id, {{svc.image_id(other.task_id, "ours"), 1},
                                                {svc.image_id(other.task_id, "ganilla"), 2},
                                                {svc.image_id(other.task_id, "cartoongan"), 3}}, "n1"})
                    .duplicate);
    EXPECT_THROW(svc.submit(pid, {other.task_id, {{svc.image_id(other.task_id, "ours"), 2},
                                                 {svc.image_id(other.task_id, "ganilla"), 1},
                                                 {svc.image_id(other.task_id, "cartoongan"), 3}}, "n1"}),
                 ConflictError);
  }
  EXPECT_EQ(log_lines(log).size(), 4u);  // session + three accepted answers

  // A restarted service folds the log back, including the nonce.
  SurveyService again(def, log);
  EXPECT_EQ(again.report().records, 2u);
  EXPECT_EQ(again.session(pid)->tasks.size(), 20u);
  EXPECT_EQ(again.answered_tasks(pid).size(), 2u);
  const auto& other = again.session(pid)->tasks[1];
  EXPECT_THROW(again.submit(pid, {other.task_id, {{again.image_id(other.task_id, "ours"), 3},
                                                 {again.image_id(other.task_id, "ganilla"), 1},
                                                 {again.image_id(other.task_id, "cartoongan"), 2}}, "n1"}),
               ConflictError);
  EXPECT_NE(again.create_session()->participant_id, pid);
}

TEST(SurveyService, LogRecordsCarryTheDisplayOrder) {
  const auto dir = scratch("logformat");
  const auto def = load_definition(tt::write_survey(dir / "s"));
  SurveyService svc(def, dir / "responses.log");
  const auto s = svc.create_session();
  const SessionTask& t = s->tasks[0];
  svc.submit(s->participant_id, {t.task_id, {{svc.image_id(t.task_id, t.image_order[0]), 2},
                                             {svc.image_id(t.task_id, t.image_order[1]), 1},
                                             {svc.image_id(t.task_id, t.image_order[2]), 3}}, ""});
  const auto lines = log_lines(dir / "responses.log");
  ASSERT_EQ(lines.size(), 2u);
  const json rec = json::parse(lines[1]);
  EXPECT_EQ(rec.at("type"), "response");
  EXPECT_EQ(rec.at("participant_id"), s->participant_id);
  EXPECT_EQ(rec.at("question_id"), def.task(t.task_id).question);
  EXPECT_EQ(rec.at("image_order").get<std::vector<std::string>>(), t.image_order);
  EXPECT_EQ(rec.at("rankings").at(t.image_order[1]), 1);
}

TEST(SurveyService, TornFinalLineIsIgnored) {
  const auto dir = scratch("torn");
  const auto def = load_definition(tt::write_survey(dir / "s"));
  {
    SurveyService svc(def, dir / "responses.log");
    svc.create_session();
  }
  std::ofstream(dir / "responses.log", std::ios::app) << "{\"type\":\"resp";
  EXPECT_EQ(read_log(dir / "responses.log").skipped_tail, 1u);
  EXPECT_NO_THROW(SurveyService(def, dir / "responses.log"));

  std::ofstream(dir / "broken.log") << "garbage\n" << json{{"type", "session"}, {"participant_id", "x"}, {"tasks", json::array()}}.dump() << "\n";
  EXPECT_THROW(read_log(dir / "broken.log"), IoError);
}

class SurveyHttp : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = scratch(::testing::UnitTest::GetInstance()->current_test_info()->name());
    def_ = load_definition(tt::write_survey(dir_ / "s"));
    svc_ = std::make_unique<SurveyService>(def_, dir_ / "responses.log");
    server_ = std::make_unique<SurveyServer>(*svc_);
    port_ = server_->start();
  }
  void TearDown() override { server_->stop(); }

  std::filesystem::path dir_;
  SurveyDefinition def_;
  std::unique_ptr<SurveyService> svc_;
  std::unique_ptr<SurveyServer> server_;
  int port_ = 0;
};

TEST_F(SurveyHttp, ScriptedSessionCompletes) {
  std::string pid;
  EXPECT_EQ(tt::run_scripted_client(port_, &pid), 60u);
  httplib::Client cli("127.0.0.1", port_);
  auto res = cli.Get("/api/report");
  ASSERT_TRUE(res);
  ASSERT_EQ(res->status, 200);
  const json report = json::parse(res->body);
  EXPECT_EQ(report.at("records"), 20);
  for (const auto& q : report.at("questions"))
    for (const auto& m : q.at("models")) EXPECT_EQ(m.at("count"), 10);

  res = cli.Get("/api/session/" + pid);
  ASSERT_TRUE(res);
  EXPECT_EQ(json::parse(res->body).at("answered").size(), 20u);
}

TEST_F(SurveyHttp, PayloadsNeverNameModels) {
  httplib::Client cli("127.0.0.1", port_);
  auto res = cli.Post("/api/session");
  ASSERT_TRUE(res);
  const std::string created = res->body;
  const std::string pid = json::parse(created).at("participant_id");
  res = cli.Get("/api/session/" + pid);
  ASSERT_TRUE(res);
  for (const std::string& body : {created, res->body}) {
    for (const auto& m : def_.models) EXPECT_EQ(body.find(m), std::string::npos) << m;
    for (const auto& t : def_.tasks)
      for (const auto& img : t.images) EXPECT_EQ(body.find(img.path.filename().string()), std::string::npos);
  }
}

TEST_F(SurveyHttp, ServesImageBytes) {
  httplib::Client cli("127.0.0.1", port_);
  const auto session = json::parse(cli.Post("/api/session")->body);
  const auto& task = session.at("tasks")[0];
  const std::string id = task.at("images")[0].at("image_id");
  auto res = cli.Get("/img/" + id);
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(res->get_header_value("Content-Type"), "image/png");
  const auto target = svc_->resolve_image(id);
  ASSERT_TRUE(target);
  for (const auto& img : def_.task(target->first).images)
    if (img.model == target->second) {
      const auto bytes = read_file(img.path);
      EXPECT_EQ(res->body, std::string(bytes.begin(), bytes.end()));
    }
  EXPECT_EQ(cli.Get("/img/0123456789abcdef")->status, 404);
}

TEST_F(SurveyHttp, ErrorStatuses) {
  httplib::Client cli("127.0.0.1", port_);
  const auto session = json::parse(cli.Post("/api/session")->body);
  const std::string pid = session.at("participant_id");
  const auto& task = session.at("tasks")[0];
  auto body = [&](int a, int b, int c) {
    json j = {{"task_id", task.at("task_id")}, {"rankings", json::object()}};
    const int r[3] = {a, b, c};
    for (int i = 0; i < 3; ++i) j["rankings"][task.at("images")[i].at("image_id").get<std::string>()] = r[i];
    return j;
  };
  const std::string url = "/api/session/" + pid + "/response";
  EXPECT_EQ(cli.Post(url, body(1, 1, 2).dump(), "application/json")->status, 400);
  EXPECT_EQ(cli.Post(url, "{not json", "application/json")->status, 400);
  EXPECT_EQ(cli.Post(url, R"({"task_id": "t01"})", "application/json")->status, 400);
  json bad = body(1, 2, 3);
  bad["task_id"] = "t99";
  EXPECT_EQ(cli.Post(url, bad.dump(), "application/json")->status, 404);
  EXPECT_EQ(cli.Post("/api/session/ffff/response", body(1, 2, 3).dump(), "application/json")->status, 404);
  EXPECT_EQ(cli.Get("/api/session/ffff")->status, 404);
  EXPECT_EQ(cli.Get("/nothing/here")->status, 404);

  json with_nonce = body(1, 2, 3);
  with_nonce["nonce"] = "abc";
  EXPECT_EQ(cli.Post(url, with_nonce.dump(), "application/json")->status, 200);
  EXPECT_EQ(cli.Post(url, with_nonce.dump(), "application/json")->status, 200);
  with_nonce["rankings"] = body(2, 1, 3)["rankings"];
  auto res = cli.Post(url, with_nonce.dump(), "application/json");
  EXPECT_EQ(res->status, 409);
  EXPECT_TRUE(json::parse(res->body).contains("error"));
  EXPECT_EQ(svc_->report().records, 1u);
}

TEST_F(SurveyHttp, ConcurrentClientsKeepTheLogIntact) {
  std::vector<std::size_t> inputs(10);
  std::vector<std::thread> clients;
  for (int i = 0; i < 10; ++i) clients.emplace_back([&, i] { inputs[i] = tt::run_scripted_client(port_); });
  for (auto& c : clients) c.join();
  for (auto n : inputs) EXPECT_EQ(n, 60u);

  const auto lines = log_lines(dir_ / "responses.log");
  std::size_t sessions = 0, responses = 0;
  std::set<std::pair<std::string, std::string>> keys;
  for (const auto& line : lines) {
    const json j = json::parse(line);  // throws on a torn or interleaved line
    if (j.at("type") == "session") ++sessions;
    if (j.at("type") == "response") {
      ++responses;
      keys.insert({j.at("participant_id").get<std::string>(), j.at("task_id").get<std::string>()});
    }
  }
  EXPECT_EQ(sessions, 10u);
  EXPECT_EQ(responses, 200u);
  EXPECT_EQ(keys.size(), 200u);
  EXPECT_EQ(svc_->report().records, 200u);
}
