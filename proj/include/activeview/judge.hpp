#pragma once

// Listwise view ranking by an external judge, with balanced candidate-order
// permutations to cancel position bias.

#include <chrono>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "activeview/microworld.hpp"

namespace av {

class JudgeEndpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A rendered view under an external (method) name.
struct Candidate {
  std::string name;
  Frame view;
};

/// One listwise query: candidates appear in the listed order under labels A, B, C, ...
struct JudgeRequest {
  std::vector<Frame> context;
  std::string instruction;
  std::vector<const Frame*> candidates;
};

class Judge {
 public:
  virtual ~Judge() = default;
  /// Raw reply text. Throws JudgeEndpointError on transport failures.
  virtual std::string query(const JudgeRequest& request) = 0;
  virtual std::string name() const = 0;
};

/// Scores each view by a seeded hash of its pixels and ranks by score; the
/// verdict depends only on content, never on list position.
class StubJudge : public Judge {
 public:
  explicit StubJudge(uint64_t seed = 0) : seed_(seed) {}
  std::string query(const JudgeRequest& request) override;
  std::string name() const override { return "stub"; }
  double score(const Frame& view) const;

 private:
  uint64_t seed_;
};

/// Always ranks in list order (A > B > C ...).
class PositionBiasedJudge : public Judge {
 public:
  std::string query(const JudgeRequest& request) override;
  std::string name() const override { return "position-biased"; }
};

struct HttpJudgeConfig {
  std::string url;    // full endpoint, e.g. https://host/v1/chat/completions
  std::string api_key;
  std::string model = "judge";
  int timeout_seconds = 120;
  int max_in_flight = 4;
  int transport_retries = 4;  // per request, with exponential backoff
  std::chrono::milliseconds backoff{500};

  /// Reads JUDGE_API_URL and JUDGE_API_KEY; throws JudgeEndpointError if the URL is unset.
  static HttpJudgeConfig from_env();
};

/// Chat-completions style client; images travel as base64 PNG data URLs.
class HttpJudge : public Judge {
 public:
  explicit HttpJudge(HttpJudgeConfig config);
  std::string query(const JudgeRequest& request) override;
  std::string name() const override { return "http:" + config_.model; }

 private:
  HttpJudgeConfig config_;
};

/// System and user prompt text for a request with k candidates.
std::string judge_system_prompt();
std::string judge_user_prompt(const std::string& instruction, int num_context, int num_candidates);
/// Full request body (temperature 0).
nlohmann::json judge_request_body(const JudgeRequest& request, const std::string& model);

/// Strict reply grammar: "RANKING: A > C > B" with every label of the first
/// k letters exactly once. Returns list positions best first, or nothing.
std::optional<std::vector<int>> parse_ranking(const std::string& reply, int num_candidates);
std::string format_ranking(const std::vector<int>& positions);

/// M orders of k candidates where every candidate occupies every position
/// exactly M/k times: cyclic shifts of M/k seeded base orders. perm[p] is the
/// candidate shown at position p. Throws ConfigError unless M is a positive
/// multiple of k.
std::vector<std::vector<int>> balanced_permutations(int k, int m, uint64_t seed);

struct RankingResult {
  std::vector<std::string> candidates;
  std::vector<double> mean_rank;               // 1 = best
  int permutations = 0;                        // requested M
  int dropped = 0;                             // permutations without a valid reply
  std::vector<int> permutation_index;          // index of each kept ranking
  std::vector<std::vector<int>> rankings;      // candidate indices, best first
  std::vector<std::string> transcripts;        // final raw reply per kept permutation

  nlohmann::json to_json() const;
  static RankingResult from_json(const nlohmann::json& j);
};

struct JudgeOptions {
  int permutations = 6;
  uint64_t seed = 0;
  int max_attempts = 3;   // replies that fail to parse
  int max_in_flight = 1;  // concurrent permutation queries
};

/// Throws ConfigError for fewer than two candidates and std::runtime_error
/// when every permutation is dropped.
RankingResult judge_rank(Judge& judge, const std::vector<Candidate>& candidates, const std::vector<Frame>& context,
                         const std::string& instruction, const JudgeOptions& opt);

/// Mean ranks from already collected rankings (candidate indices, best first).
std::vector<double> mean_ranks(const std::vector<std::vector<int>>& rankings, int num_candidates);

/// Human rankings from CSV rows `task,rater,ranking` where ranking lists
/// candidate names separated by '>' (best first). Header row required.
/// Returns one result per task, in first-appearance order.
std::vector<std::pair<std::string, RankingResult>> read_human_rankings(const std::filesystem::path& csv);

/// Re-render of a relative pose at judge resolution (square, default 256).
Frame render_candidate(const TaskRecord& record, const CameraPose& relative, int size = 256);

}  // namespace av
