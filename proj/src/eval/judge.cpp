#include "activeview/judge.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <mutex>
#include <numeric>
#include <regex>
#include <sstream>
#include <thread>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "activeview/image_io.hpp"
#include "activeview/model.hpp"

namespace av {

namespace {

char label_of(int position) { return static_cast<char>('A' + position); }

uint64_t fnv1a(uint64_t h, const void* data, size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string trim(const std::string& s) {
  const size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

// ---- stub judges ----------------------------------------------------------------------

double StubJudge::score(const Frame& view) const {
  uint64_t h = fnv1a(0xcbf29ce484222325ull ^ mix_seed(seed_, 0x6a756467), &view.width, sizeof(view.width));
  h = fnv1a(h, &view.height, sizeof(view.height));
  // Quantize so that the score is a function of the displayed 8-bit image.
  for (float v : view.rgb) {
    const auto q = static_cast<uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
    h = fnv1a(h, &q, 1);
  }
  return static_cast<double>(mix_seed(h, 1) >> 11) * 0x1.0p-53;
}

std::string StubJudge::query(const JudgeRequest& request) {
  const int k = static_cast<int>(request.candidates.size());
  std::vector<double> s(k);
  for (int i = 0; i < k; ++i) s[i] = score(*request.candidates[i]);
  std::vector<int> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return s[a] > s[b]; });
  return format_ranking(order);
}

std::string PositionBiasedJudge::query(const JudgeRequest& request) {
  std::vector<int> order(request.candidates.size());
  std::iota(order.begin(), order.end(), 0);
  return format_ranking(order);
}

// ---- prompt and reply grammar -------------------------------------------------------------

std::string judge_system_prompt() {
  return "You compare candidate camera views of an indoor scene. Rank every candidate from best to worst by "
         "how well it fulfills the instruction and how clearly the requested object is visible. Reply with "
         "exactly one line of the form RANKING: A > B > C listing every candidate label once, and nothing else.";
}

std::string judge_user_prompt(const std::string& instruction, int num_context, int num_candidates) {
  std::string labels;
  for (int i = 0; i < num_candidates; ++i) {
    if (i) labels += ", ";
    labels += label_of(i);
  }
  return fmt::format(
      "The first {} image(s) show what the robot has already seen; the first of them is its current view.\n"
      "Instruction: {}\n"
      "The following {} images are candidate views labeled {} in the order shown.\n"
      "Answer with RANKING: followed by all labels from best to worst separated by '>'.",
      num_context, instruction, num_candidates, labels);
}

nlohmann::json judge_request_body(const JudgeRequest& request, const std::string& model) {
  const int k = static_cast<int>(request.candidates.size());
  auto image_part = [](const Frame& f) {
    return nlohmann::json{{"type", "image_url"},
                          {"image_url", {{"url", "data:image/png;base64," + base64_encode(encode_png(f))}}}};
  };
  nlohmann::json content = nlohmann::json::array();
  content.push_back(
      {{"type", "text"}, {"text", judge_user_prompt(request.instruction, static_cast<int>(request.context.size()), k)}});
  for (size_t i = 0; i < request.context.size(); ++i) {
    content.push_back({{"type", "text"}, {"text", fmt::format("Context image {}:", i + 1)}});
    content.push_back(image_part(request.context[i]));
  }
  for (int i = 0; i < k; ++i) {
    content.push_back({{"type", "text"}, {"text", fmt::format("Candidate {}:", label_of(i))}});
    content.push_back(image_part(*request.candidates[i]));
  }
  return {{"model", model},
          {"temperature", 0},
          {"messages",
           nlohmann::json::array({{{"role", "system"}, {"content", judge_system_prompt()}},
                                  {{"role", "user"}, {"content", std::move(content)}}})}};
}

std::optional<std::vector<int>> parse_ranking(const std::string& reply, int num_candidates) {
  if (num_candidates < 1 || num_candidates > 26) return std::nullopt;
  static const std::regex grammar(R"(^RANKING:\s*([A-Z](?:\s*>\s*[A-Z])*)$)");
  std::smatch m;
  const std::string line = trim(reply);
  if (!std::regex_match(line, m, grammar)) return std::nullopt;
  std::vector<int> out;
  std::vector<bool> seen(num_candidates, false);
  for (char c : m[1].str()) {
    if (c < 'A' || c > 'Z') continue;
    const int p = c - 'A';
    if (p >= num_candidates || seen[p]) return std::nullopt;
    seen[p] = true;
    out.push_back(p);
  }
  if (static_cast<int>(out.size()) != num_candidates) return std::nullopt;
  return out;
}

std::string format_ranking(const std::vector<int>& positions) {
  std::string s = "RANKING: ";
  for (size_t i = 0; i < positions.size(); ++i) {
    if (i) s += " > ";
    s += label_of(positions[i]);
  }
  return s;
}

// ---- permutations and aggregation ---------------------------------------------------------

std::vector<std::vector<int>> balanced_permutations(int k, int m, uint64_t seed) {
  if (k < 1) throw ConfigError("balanced permutations need at least one candidate");
  if (m < 1 || m % k != 0)
    throw ConfigError(fmt::format("permutation count {} must be a positive multiple of the candidate count {}", m, k));
  std::vector<std::vector<int>> out;
  for (int b = 0; b < m / k; ++b) {
    std::vector<int> base(k);
    std::iota(base.begin(), base.end(), 0);
    Rng rng(mix_seed(seed, static_cast<uint64_t>(b)));
    for (int i = k - 1; i > 0; --i) std::swap(base[i], base[rng.uniform_int(0, i)]);
    for (int shift = 0; shift < k; ++shift) {
      std::vector<int> p(k);
      for (int pos = 0; pos < k; ++pos) p[pos] = base[(pos + shift) % k];
      out.push_back(std::move(p));
    }
  }
  return out;
}

std::vector<double> mean_ranks(const std::vector<std::vector<int>>& rankings, int num_candidates) {
  std::vector<double> sum(num_candidates, 0.0);
  if (rankings.empty()) return sum;
  for (const auto& r : rankings) {
    for (size_t place = 0; place < r.size(); ++place) sum.at(r[place]) += static_cast<double>(place + 1);
  }
  for (double& s : sum) s /= static_cast<double>(rankings.size());
  return sum;
}

nlohmann::json RankingResult::to_json() const {
  nlohmann::json ranks = nlohmann::json::object();
  for (size_t i = 0; i < candidates.size(); ++i) ranks[candidates[i]] = mean_rank.at(i);
  return {{"candidates", candidates},
          {"mean_rank", mean_rank},
          {"mean_rank_by_name", std::move(ranks)},
          {"permutations", permutations},
          {"dropped", dropped},
          {"permutation_index", permutation_index},
          {"rankings", rankings},
          {"transcripts", transcripts}};
}

RankingResult RankingResult::from_json(const nlohmann::json& j) {
  RankingResult r;
  r.candidates = j.at("candidates").get<std::vector<std::string>>();
  r.mean_rank = j.at("mean_rank").get<std::vector<double>>();
  r.permutations = j.at("permutations").get<int>();
  r.dropped = j.at("dropped").get<int>();
  r.permutation_index = j.at("permutation_index").get<std::vector<int>>();
  r.rankings = j.at("rankings").get<std::vector<std::vector<int>>>();
  r.transcripts = j.at("transcripts").get<std::vector<std::string>>();
  return r;
}

RankingResult judge_rank(Judge& judge, const std::vector<Candidate>& candidates, const std::vector<Frame>& context,
                         const std::string& instruction, const JudgeOptions& opt) {
  const int k = static_cast<int>(candidates.size());
  if (k < 2) throw ConfigError("judge ranking needs at least two candidates");
  if (k > 26) throw ConfigError("judge ranking supports at most 26 candidates");
  if (opt.max_attempts < 1 || opt.max_in_flight < 1) throw ConfigError("judge options must be positive");
  const auto perms = balanced_permutations(k, opt.permutations, opt.seed);
  const int m = static_cast<int>(perms.size());

  struct Slot {
    std::optional<std::vector<int>> ranking;  // candidate indices, best first
    std::string transcript;
    std::exception_ptr error;
  };
  std::vector<Slot> slots(m);

  auto run_one = [&](int i) {
    JudgeRequest req{context, instruction, {}};
    for (int pos = 0; pos < k; ++pos) req.candidates.push_back(&candidates[perms[i][pos]].view);
    for (int attempt = 1; attempt <= opt.max_attempts; ++attempt) {
      const std::string reply = judge.query(req);
      slots[i].transcript = reply;
      if (auto positions = parse_ranking(reply, k)) {
        std::vector<int> ranking;
        for (int p : *positions) ranking.push_back(perms[i][p]);
        slots[i].ranking = std::move(ranking);
        return;
      }
      spdlog::warn("judge reply for permutation {} rejected (attempt {}/{}): {}", i, attempt, opt.max_attempts,
                   reply.substr(0, 120));
    }
  };

  std::atomic<int> next{0};
  auto worker = [&] {
    for (int i = next++; i < m; i = next++) {
      try {
        run_one(i);
      } catch (...) {
        slots[i].error = std::current_exception();
      }
    }
  };
  const int threads = std::min(opt.max_in_flight, m);
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  RankingResult r;
  r.permutations = m;
  for (const Candidate& c : candidates) r.candidates.push_back(c.name);
  for (int i = 0; i < m; ++i) {
    if (slots[i].error) std::rethrow_exception(slots[i].error);
    if (!slots[i].ranking) {
      ++r.dropped;
      continue;
    }
    r.permutation_index.push_back(i);
    r.rankings.push_back(*slots[i].ranking);
    r.transcripts.push_back(slots[i].transcript);
  }
  if (r.rankings.empty()) throw std::runtime_error(fmt::format("judge: all {} permutations were dropped", m));
  r.mean_rank = mean_ranks(r.rankings, k);
  return r;
}

// ---- HTTP judge ----------------------------------------------------------------------

HttpJudgeConfig HttpJudgeConfig::from_env() {
  HttpJudgeConfig c;
  const char* url = std::getenv("JUDGE_API_URL");
  if (!url || !*url) throw JudgeEndpointError("JUDGE_API_URL is not set");
  c.url = url;
  if (const char* key = std::getenv("JUDGE_API_KEY")) c.api_key = key;
  return c;
}

HttpJudge::HttpJudge(HttpJudgeConfig config) : config_(std::move(config)) {
  if (config_.url.empty()) throw JudgeEndpointError("judge endpoint URL is empty");
}

std::string HttpJudge::query(const JudgeRequest& request) {
  static const std::regex url_re(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(config_.url, m, url_re)) throw JudgeEndpointError("malformed judge URL: " + config_.url);
  const std::string origin = m[1].str();
  const std::string path = m[2].matched ? m[2].str() : "/";
  const std::string body = judge_request_body(request, config_.model).dump();

  httplib::Headers headers;
  if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

  auto delay = config_.backoff;
  std::string last_error;
  for (int attempt = 0; attempt <= config_.transport_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(delay);
      delay *= 2;
    }
    httplib::Client client(origin);
    client.set_connection_timeout(config_.timeout_seconds);
    client.set_read_timeout(config_.timeout_seconds);
    auto res = client.Post(path, headers, body, "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = fmt::format("HTTP {}", res->status);
      continue;
    }
    if (res->status != 200) throw JudgeEndpointError(fmt::format("judge endpoint returned HTTP {}", res->status));
    try {
      const auto j = nlohmann::json::parse(res->body);
      return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const std::exception& e) {
      // A reply the grammar cannot use; the ranking loop treats it as malformed.
      return std::string("unparseable response: ") + e.what();
    }
  }
  throw JudgeEndpointError("judge endpoint unreachable: " + last_error);
}

// ---- human rankings --------------------------------------------------------------------

std::vector<std::pair<std::string, RankingResult>> read_human_rankings(const std::filesystem::path& csv) {
  std::ifstream in(csv);
  if (!in) throw std::runtime_error("cannot open " + csv.string());
  std::string line;
  if (!std::getline(in, line) || trim(line) != "task,rater,ranking")
    throw ConfigError(csv.string() + ": expected header 'task,rater,ranking'");

  std::vector<std::pair<std::string, RankingResult>> out;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ',')) cols.push_back(trim(col));
    if (cols.size() != 3) throw ConfigError(fmt::format("{}:{}: expected 3 columns", csv.string(), line_no));

    std::vector<std::string> names;
    std::stringstream rs(cols[2]);
    std::string name;
    while (std::getline(rs, name, '>')) names.push_back(trim(name));

    auto it = std::find_if(out.begin(), out.end(), [&](const auto& p) { return p.first == cols[0]; });
    if (it == out.end()) {
      RankingResult r;
      r.candidates = names;
      std::sort(r.candidates.begin(), r.candidates.end());
      out.emplace_back(cols[0], std::move(r));
      it = std::prev(out.end());
    }
    RankingResult& r = it->second;
    std::vector<int> ranking;
    std::vector<bool> seen(r.candidates.size(), false);
    for (const std::string& n : names) {
      const auto pos = std::find(r.candidates.begin(), r.candidates.end(), n);
      if (pos == r.candidates.end() || seen[pos - r.candidates.begin()])
        throw ConfigError(fmt::format("{}:{}: ranking does not match the task's candidates", csv.string(), line_no));
      seen[pos - r.candidates.begin()] = true;
      ranking.push_back(static_cast<int>(pos - r.candidates.begin()));
    }
    if (ranking.size() != r.candidates.size())
      throw ConfigError(fmt::format("{}:{}: ranking is incomplete", csv.string(), line_no));
    r.permutation_index.push_back(static_cast<int>(r.rankings.size()));
    r.rankings.push_back(std::move(ranking));
    r.transcripts.push_back("rater:" + cols[1]);
    r.permutations = static_cast<int>(r.rankings.size());
  }
  for (auto& [_, r] : out) r.mean_rank = mean_ranks(r.rankings, static_cast<int>(r.candidates.size()));
  return out;
}

Frame render_candidate(const TaskRecord& record, const CameraPose& relative, int size) {
  if (size < 1) throw ConfigError("candidate size must be positive");
  return render(record.scene, record.to_world(relative), Resolution{size, size});
}

}  // namespace av
