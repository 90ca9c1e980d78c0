#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <thread>

#include <fmt/format.h>

#include "activeview/judge.hpp"
#include "activeview/model.hpp"

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

using namespace av;
namespace fs = std::filesystem;

namespace {

Frame solid(float r, float g, float b, int size = 8) {
  Frame f;
  f.width = size;
  f.height = size;
  for (int i = 0; i < size * size; ++i) {
    f.rgb.push_back(r);
    f.rgb.push_back(g);
    f.rgb.push_back(b);
  }
  return f;
}

std::vector<Candidate> palette(int k) {
  std::vector<Candidate> c;
  for (int i = 0; i < k; ++i) {
    c.push_back({fmt::format("m{}", i), solid(0.1f * static_cast<float>(i), 0.5f, 1.0f - 0.1f * static_cast<float>(i))});
  }
  return c;
}

/// Ranks by a hidden per-color score and never looks at positions.
class HiddenScoreJudge : public Judge {
 public:
  explicit HiddenScoreJudge(std::map<float, double> score) : score_(std::move(score)) {}
  std::string query(const JudgeRequest& req) override {
    std::vector<int> order(req.candidates.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return score_.at(req.candidates[a]->rgb[0]) > score_.at(req.candidates[b]->rgb[0]); });
    return format_ranking(order);
  }
  std::string name() const override { return "hidden"; }

 private:
  std::map<float, double> score_;
};

/// Replies with garbage for the first `bad` calls of every request content.
class FlakyJudge : public Judge {
 public:
  explicit FlakyJudge(int bad) : bad_(bad) {}
  std::string query(const JudgeRequest& req) override {
    if (calls_++ % 3 < bad_) return "I think A is best";
    std::vector<int> order(req.candidates.size());
    std::iota(order.begin(), order.end(), 0);
    return format_ranking(order);
  }
  std::string name() const override { return "flaky"; }
  int calls() const { return calls_; }

 private:
  int bad_;
  std::atomic<int> calls_{0};
};

}  // namespace

TEST_CASE("ranking grammar is strict") {
  auto r = parse_ranking("RANKING: A > C > B", 3);
  REQUIRE(r);
  CHECK(*r == std::vector<int>{0, 2, 1});
  CHECK(parse_ranking("  RANKING:B>A \n", 2));
  CHECK(!parse_ranking("Ranking: A > B", 2));
  CHECK(!parse_ranking("RANKING: A > B", 3));       // missing label
  CHECK(!parse_ranking("RANKING: A > A > B", 3));   // duplicate
  CHECK(!parse_ranking("RANKING: A > D > B", 3));   // out of range
  CHECK(!parse_ranking("RANKING: A, B, C", 3));
  CHECK(!parse_ranking("Sure! RANKING: A > B", 2));
  CHECK(!parse_ranking("RANKING: A > B\nbecause", 2));
  CHECK(format_ranking({2, 0, 1}) == "RANKING: C > A > B");
}

TEST_CASE("balanced permutations put every candidate in every slot equally often") {
  for (int k = 2; k <= 5; ++k) {
    for (int mult = 1; mult <= 3; ++mult) {
      const auto perms = balanced_permutations(k, k * mult, 17);
      REQUIRE(perms.size() == static_cast<size_t>(k * mult));
      std::vector<std::vector<int>> count(k, std::vector<int>(k, 0));
      for (const auto& p : perms) {
        std::vector<int> sorted = p;
        std::sort(sorted.begin(), sorted.end());
        for (int i = 0; i < k; ++i) REQUIRE(sorted[i] == i);
        for (int pos = 0; pos < k; ++pos) ++count[p[pos]][pos];
      }
      for (const auto& row : count) {
        for (int c : row) CHECK(c == mult);
      }
    }
  }
  CHECK(balanced_permutations(3, 6, 1) == balanced_permutations(3, 6, 1));
  CHECK_THROWS_AS(balanced_permutations(3, 4, 0), ConfigError);
  CHECK_THROWS_AS(balanced_permutations(3, 0, 0), ConfigError);
}

TEST_CASE("consistent judge reproduces its hidden order for any M") {
  const auto cands = palette(4);
  std::map<float, double> score;
  const std::vector<double> hidden = {0.3, 0.9, 0.1, 0.5};  // best: m1, m3, m0, m2
  for (int i = 0; i < 4; ++i) score[cands[i].view.rgb[0]] = hidden[i];
  HiddenScoreJudge judge(score);
  for (int m : {4, 8, 12}) {
    JudgeOptions opt;
    opt.permutations = m;
    const RankingResult r = judge_rank(judge, cands, {}, "look at the lamp", opt);
    CHECK(r.mean_rank == std::vector<double>{3.0, 1.0, 4.0, 2.0});
    CHECK(r.dropped == 0);
    CHECK(r.rankings.size() == static_cast<size_t>(m));
  }
}

TEST_CASE("stub judge mean ranks are invariant under relabeling") {
  const auto cands = palette(5);
  StubJudge judge(3);
  JudgeOptions opt;
  opt.permutations = 10;
  const RankingResult base = judge_rank(judge, cands, {}, "find the chair", opt);

  std::vector<int> order = {3, 0, 4, 1, 2};
  std::vector<Candidate> shuffled;
  for (int i : order) shuffled.push_back({"renamed" + cands[i].name, cands[i].view});
  for (uint64_t seed : {0ull, 1ull, 99ull}) {
    opt.seed = seed;
    const RankingResult r = judge_rank(judge, shuffled, {}, "find the chair", opt);
    for (size_t j = 0; j < order.size(); ++j) CHECK(r.mean_rank[j] == base.mean_rank[order[j]]);
  }
  // Content hash, so the verdict is a strict order.
  std::vector<double> sorted = base.mean_rank;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == std::vector<double>{1, 2, 3, 4, 5});
}

TEST_CASE("pure position bias cancels to a tie") {
  PositionBiasedJudge judge;
  for (int k = 2; k <= 5; ++k) {
    for (int mult : {1, 2}) {
      JudgeOptions opt;
      opt.permutations = k * mult;
      opt.seed = 7;
      const RankingResult r = judge_rank(judge, palette(k), {}, "x", opt);
      for (double v : r.mean_rank) CHECK(v == (k + 1) / 2.0);
    }
  }
}

TEST_CASE("mean ranks conserve the rank total") {
  StubJudge judge(0);
  JudgeOptions opt;
  opt.permutations = 6;
  const RankingResult r = judge_rank(judge, palette(3), {}, "x", opt);
  CHECK(r.mean_rank[0] + r.mean_rank[1] + r.mean_rank[2] == doctest::Approx(6.0).epsilon(1e-15));
  const RankingResult back = RankingResult::from_json(r.to_json());
  CHECK(back.mean_rank == r.mean_rank);
  CHECK(back.rankings == r.rankings);
}

TEST_CASE("malformed replies are retried, then dropped") {
  JudgeOptions opt;
  opt.permutations = 4;
  FlakyJudge two_bad(2);  // third attempt succeeds
  const RankingResult ok = judge_rank(two_bad, palette(2), {}, "x", opt);
  CHECK(ok.dropped == 0);
  CHECK(two_bad.calls() == 12);

  FlakyJudge all_bad(3);
  CHECK_THROWS_AS(judge_rank(all_bad, palette(2), {}, "x", opt), std::runtime_error);
  CHECK(all_bad.calls() == 12);

  CHECK_THROWS_AS(judge_rank(all_bad, palette(1), {}, "x", opt), ConfigError);
}

TEST_CASE("concurrent queries merge deterministically") {
  StubJudge judge(5);
  JudgeOptions opt;
  opt.permutations = 12;
  const RankingResult serial = judge_rank(judge, palette(4), {}, "x", opt);
  opt.max_in_flight = 4;
  const RankingResult parallel = judge_rank(judge, palette(4), {}, "x", opt);
  CHECK(serial.rankings == parallel.rankings);
  CHECK(serial.permutation_index == parallel.permutation_index);
}

TEST_CASE("request body carries every image as a data URL") {
  const auto cands = palette(3);
  std::vector<Frame> ctx = {solid(0, 0, 0), solid(1, 1, 1)};
  JudgeRequest req{ctx, "look at the tv", {&cands[0].view, &cands[1].view, &cands[2].view}};
  const auto body = judge_request_body(req, "some-model");
  CHECK(body.at("temperature") == 0);
  CHECK(body.at("model") == "some-model");
  int images = 0;
  std::string text;
  for (const auto& part : body.at("messages").at(1).at("content")) {
    if (part.at("type") == "image_url") {
      ++images;
      CHECK(part.at("image_url").at("url").get<std::string>().rfind("data:image/png;base64,", 0) == 0);
    } else {
      text += part.at("text").get<std::string>();
    }
  }
  CHECK(images == 5);
  CHECK(text.find("look at the tv") != std::string::npos);
  CHECK(text.find("Candidate C") != std::string::npos);
}

TEST_CASE("HTTP judge talks to a chat-completions endpoint") {
  httplib::Server server;
  std::atomic<int> hits{0};
  std::string seen_auth;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    if (hits++ == 0) {
      res.status = 503;  // first call is retried
      return;
    }
    seen_auth = req.get_header_value("Authorization");
    const auto body = nlohmann::json::parse(req.body);
    int cands = 0;
    for (const auto& part : body["messages"][1]["content"]) {
      if (part["type"] == "text" && part["text"].get<std::string>().rfind("Candidate", 0) == 0) ++cands;
    }
    std::vector<int> order(static_cast<size_t>(cands));
    std::iota(order.rbegin(), order.rend(), 0);
    res.set_content(nlohmann::json{{"choices", {{{"message", {{"content", format_ranking(order)}}}}}}}.dump(),
                    "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  HttpJudgeConfig cfg;
  cfg.url = fmt::format("http://127.0.0.1:{}/v1/chat/completions", port);
  cfg.api_key = "secret";
  cfg.backoff = std::chrono::milliseconds(1);
  HttpJudge judge(cfg);
  JudgeOptions opt;
  opt.permutations = 2;
  const RankingResult r = judge_rank(judge, palette(2), {}, "x", opt);
  CHECK(r.dropped == 0);
  // The endpoint always prefers the last-listed view: balanced order cancels it.
  CHECK(r.mean_rank == std::vector<double>{1.5, 1.5});
  CHECK(seen_auth == "Bearer secret");
  CHECK(hits == 3);

  server.stop();
  t.join();

  cfg.url = fmt::format("http://127.0.0.1:{}/v1/chat/completions", port);
  cfg.transport_retries = 1;
  cfg.timeout_seconds = 1;
  HttpJudge dead(cfg);
  CHECK_THROWS_AS(judge_rank(dead, palette(2), {}, "x", opt), JudgeEndpointError);
  CHECK_THROWS_AS(HttpJudge(HttpJudgeConfig{}), JudgeEndpointError);
}

TEST_CASE("human rankings from CSV") {
  const fs::path p = fs::temp_directory_path() / "av_human.csv";
  {
    std::ofstream f(p);
    f << "task,rater,ranking\n"
      << "t1,alice,model > gt > start\n"
      << "t1,bob,gt > model > start\n"
      << "t2,alice,b>a\n";
  }
  const auto res = read_human_rankings(p);
  REQUIRE(res.size() == 2);
  CHECK(res[0].first == "t1");
  const RankingResult& r = res[0].second;
  CHECK(r.candidates == std::vector<std::string>{"gt", "model", "start"});
  CHECK(r.mean_rank == std::vector<double>{1.5, 1.5, 3.0});
  CHECK(r.permutations == 2);
  CHECK(res[1].second.mean_rank == std::vector<double>{2.0, 1.0});

  {
    std::ofstream f(p);
    f << "task,rater,ranking\nt1,a,x > y\nt1,b,x > z\n";
  }
  CHECK_THROWS_AS(read_human_rankings(p), ConfigError);
  {
    std::ofstream f(p);
    f << "id,ranking\n";
  }
  CHECK_THROWS_AS(read_human_rankings(p), ConfigError);
  fs::remove(p);
}

TEST_CASE("candidates are re-rendered at judge resolution") {
  MicroworldParams mp;
  mp.width = 32;
  mp.height = 32;
  const TaskRecord r = generate_task(mix_seed(1, 2), 2, mp);
  const Frame f = render_candidate(r, r.target.pose);
  CHECK(f.width == 256);
  CHECK(f.height == 256);
  CHECK(std::abs(f.coverage(r.spec.target_id) - r.target.coverage(r.spec.target_id)) < 0.02);
}
