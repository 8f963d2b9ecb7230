#pragma once

#include <atomic>
#include <cstddef>
#include <functional>
#include <memory>
#include <mutex>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "colan/matrix.hpp"
#include "colan/mining/transport.hpp"
#include "colan/store.hpp"

namespace colan::mining {

inline constexpr const char* kChatPath = "/v1/chat/completions";
inline constexpr const char* kEmbeddingsPath = "/v1/embeddings";
inline constexpr std::size_t kMinConcepts = 15;
inline constexpr std::size_t kMinStimuli = 30;

struct ClientConfig {
  std::string endpoint_url = "http://127.0.0.1:8080";
  std::string model_name = "gpt-4o";
  // Name of the environment variable holding the API key. Empty means the
  // service is unauthenticated. The key itself is never logged.
  std::string api_key_env = "COLAN_API_KEY";
  int max_retries = 2;
  double request_timeout = 30.0;
  int max_concurrent_requests = 4;

  void validate() const;
};

// One editing task: prompts with at most one bracketed "[concept]" span each.
struct EditTask {
  std::string source_prompt;
  std::string target_prompt;
  std::string source_concept;
  std::string target_concept;
  std::string image_path;  // empty = text-only
};

struct ConceptListResponse {
  std::vector<std::string> concepts;
};

struct StimulusSetResponse {
  std::string name;
  std::vector<std::string> stimuli;
};

// Contents of every "[...]" span in order. Unterminated spans count as
// malformed and throw ValidationFailed.
std::vector<std::string> bracketed_spans(std::string_view text);

// Pulls a list of strings out of model output: strict JSON first, then the
// first balanced bracket block, then quoted items inside it. Throws
// MalformedResponse when no list can be recovered.
std::vector<std::string> extract_string_list(const std::string& text);

// choices[0].message.content of a chat-completions response body.
std::string extract_chat_content(const std::string& response_body);

// Builds a live transport, resolving the key via cfg.api_key_env. Throws
// MissingApiKey when the variable is named but unset or empty.
std::shared_ptr<Transport> make_http_transport(const ClientConfig& cfg);

// Runs job(0..n_jobs-1) on at most `limit` worker threads; rethrows the
// first failure after all workers stop.
void run_bounded(std::size_t limit, std::size_t n_jobs,
                 const std::function<void(std::size_t)>& job);

class MiningClient {
 public:
  MiningClient(ClientConfig cfg, std::shared_ptr<Transport> transport);

  // Concept list for a task whose source concept is known (bracketed in the
  // source prompt or set explicitly). First entry equals the source concept,
  // the target concept is excluded, entries are unique, at least 15 total.
  ConceptListResponse parse_concepts(const EditTask& task);

  // For insertion tasks with no source concept: asks the model to rewrite
  // the source prompt around a bracketed counterpart concept and returns the
  // task with source_prompt and source_concept filled in.
  EditTask rewrite_for_insertion(const EditTask& task);

  // At least 30 unique stimuli for one concept. Duplicates are dropped; if
  // that falls short, one top-up request is issued before giving up.
  StimulusSetResponse synthesize_stimuli(const std::string& concept_name);

  // One embedding row per text, in input order. Rows are served from the
  // cache when given one; new rows are written back keyed (model, text).
  DenseMatrix embed_texts(std::span<const std::string> texts,
                          store::EmbeddingCache* cache = nullptr);

  // Request bodies exactly as they would go on the wire (dry-run surface).
  std::string build_parse_request(const EditTask& task) const;
  std::string build_rewrite_request(const EditTask& task) const;
  std::string build_stimuli_request(const std::string& concept_name) const;
  std::string build_embed_request(std::span<const std::string> texts) const;

  std::size_t request_count() const noexcept { return requests_sent_.load(); }
  const ClientConfig& config() const noexcept { return cfg_; }

  // Tests inject a sleeper to observe backoff delays instead of waiting.
  void set_sleeper(std::function<void(double)> sleeper);

 private:
  HttpResponse post_with_retry(const std::string& path, const std::string& body);
  // check throws MalformedResponse/ValidationFailed on bad content; the loop
  // appends a repair message and retries up to max_retries, then rethrows.
  std::string chat_with_repair(std::string body,
                               const std::function<void(const std::string&)>& check);
  void backoff(int attempt);

  ClientConfig cfg_;
  std::shared_ptr<Transport> transport_;
  std::function<void(double)> sleeper_;
  std::atomic<std::size_t> requests_sent_{0};
  std::mt19937_64 jitter_rng_;
  std::mutex jitter_mu_;
};

}  // namespace colan::mining
