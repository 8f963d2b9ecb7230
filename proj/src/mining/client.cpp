#include "colan/mining/client.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <optional>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <utility>

#include <json.hpp>

#include "colan/dictionary.hpp"
#include "colan/errors.hpp"

namespace colan::mining {

using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Instruction templates. Each request is one user message: template text
// followed by the filled input block, mirroring the demonstrations.
// ---------------------------------------------------------------------------

constexpr const char* kRewriteTemplate =
    R"(You are one of the best experts in Generative Models and Concept Learning in the world. You are very good at designing concept dictionary to research the representation in latent space from CLIP or Score-based Generative Models, which have wide applications in image editing. You are a great expert in understanding and parsing multimodal information from a given image. Now, given a source prompt, a target prompt, and a source image, your task is to rewrite the source prompt for the image editing task. Usually, there is a focused pair of concepts in the source prompt and the target prompt to be edited (e.g., "cat" to "dog"). The source concept is usually annotated in the brackets ("[]") in the source prompt. However, in some editing tasks, there is no clear source concept mentioned in the source prompt. Hence, for these tasks, you are required to comprehend the source image and identify the corresponding source concept. After comprehending the source image, you need to generate a re-written source prompt with a clearly annotated source concept.

Here are two demonstrations:

Source Prompt: a slanted mountain bicycle on the road in front of a building
Target Prompt: a slanted [rusty] mountain bicycle on the road in front of a building
Source Concept: ""
Target Concept: "rusty"
Source Image: (IMG)
Re-written Source Prompt: a slanted [new] mountain bicycle on the road in front of a building

Source Prompt: two birds sitting on a branch
Target Prompt: two [origami] birds sitting on a branch
Source Concept: ""
Target Concept: "origami"
Source Image: (IMG)
Re-written Source Prompt: two [real] birds sitting on a branch

The identified source concept should not be the same as the target concept. The response MUST be with brackets ("[]") around the source concept. You should not use "without" frequently. Try your best to comprehend the image.
You should only output the re-written source prompt. DO NOT print anything else such as "Here are ...", "Sure, ...", "Certainly, ...".
DO NOT print quotation marks unless necessary. Just return the string.

)";

constexpr const char* kConceptListTemplate =
    R"(You are one of the best experts in Generative Models and Concept Learning in the world. You are very good at designing concept dictionary to research the representation in latent space from CLIP or Score-based Generative Models, which have wide applications in image editing. You are a great expert in understanding and parsing multimodal information from a given image.
Now, given a source prompt, a target prompt, and a source image, your task is to parse the given information into a concept list. The concept list consists of concepts, attributes, objects, and items that comprehensively describe the source image and cover the source prompt.
Your concept list must have at least 15 concepts. As the concept list is for the task of image editing, there is a focused pair of concepts in the source prompt and the target prompt to be edited. The source concept is usually annotated in the bracket ("[]") in the source prompt. You must put the focused concept in the source prompt as the FIRST atom in the concept list. You must NOT put the focused concept in the target prompt in the concept list.

Here are three demonstrations:

Source Prompt: a [round] cake with orange frosting on a wooden plate
Target Prompt: a [square] cake with orange frosting on a wooden plate
Source Concept: "round"
Target Concept: "square"
Source Image: (IMG)
Concept List: ["round", "cake", "orange", "frosting", "wooden", "plate", "swirl", "creamy", "crumbly", "smooth", "rustic", "natural", "muted", "handmade", "warm", "minimalist", "unfrosted", "botanical", "bark", "inviting", "cozy", "textured", "simple", "organic", "earthy", "soft", "classic", "contrasting", "neutral", "clean"]

Source Prompt: a painting of [a dog in] the forest
Target Prompt: a painting of the forest
Source Concept: "a dog in"
Target Concept: ""
Source Image: (IMG)
Concept List: ["a dog in", "painting", "forest", "trees", "leaves", "sunlight", "vibrant colors", "orange hues", "pink trees", "purple plants", "playful", "cartoonish", "nature", "animals", "butterflies", "fantasy", "surreal", "whimsical", "tall trees", "shadows", "depth", "light beams", "foliage", "dynamic", "warm tones", "imaginative", "dreamlike", "motion", "soft textures", "layered composition", "bright atmosphere"]

Source Prompt: blue light, a black and white [cat] is playing with a flower
Target Prompt: blue light, a black and white [dog] is playing with a flower
Source Concept: "cat"
Target Concept: "dog"
Source Image: (IMG)
Concept List: ["cat", "black", "white", "blue light", "flower", "playing", "paws", "stone path", "curious", "whiskers", "small", "fluffy", "outdoor", "pink petals", "focused", "nature", "detailed fur", "green stem", "bright", "youthful", "movement", "natural light", "close-up", "gentle", "exploration", "soft shadows", "grass between stones", "alert", "innocent", "delicate"]

The concepts in the list should not be redundant or repetitive. Each concept in the list represents a unique perspective of objects, styles, and contexts. The response MUST be in Python list format.
You should have at least 15 concepts in the list. You should only output the Python list.
DO NOT print anything else such as "Here are ...", "Sure, ...", "Certainly, ...". Just return the list ["", "", ..., ..., ""].

)";

constexpr const char* kStimulusTemplate =
    R"(You are one of the best experts in Generative Models and Concept Learning in the world. You are very good at generating concept stimuli to research the representation in latent space from CLIP or Score-based Generative Models, which have wide applications in image editing. You are a great expert in providing relevant information and scenarios based on a given concept.
Now, given a concept, your task is to generate 30 (THIRTY) instances of concept stimuli for a given concept. As the concept stimuli will be used for the task of image editing, we need comprehensive, diverse, and accurate descriptions and examples for the concept.

Here are three demonstrations of the concept and its corresponding concept stimuli:

Concept: dog
Concept Stimuli:
[
"Dogs are known for their loyalty and strong bonds with humans.",
"A dog wags its tail excitedly when it sees its owner after a long day.",
"Puppies often chew on objects as a way to explore their environment.",
"The sound of a dog's bark can vary depending on its breed and mood.",
"Dogs rely heavily on their sense of smell, which is far more sensitive than that of humans.",
"A dog runs alongside its owner during a morning jog, full of energy.",
...
]

Concept: cat
Concept Stimuli:
[
"Cats are known for their graceful, stealthy movements.",
"A cat stretches lazily under the warm afternoon sun.",
"Kittens explore their surroundings with curiosity and playfulness.",
"A cat's purring has been shown to have a calming effect on humans.",
"Stray cats often rely on their instincts and sharp senses for survival.",
"The eyes of a cat reflect light in the dark, giving them superior night vision.",
...
]

Concept: cake
Concept Stimuli:
[
"Cakes are often baked in layers and filled with frosting or cream in between each layer.",
"A slice of cake reveals its moist interior, topped with a rich layer of chocolate ganache.",
"Cakes are a common centerpiece for celebrations such as birthdays, weddings, and anniversaries.",
"A cake adorned with fresh berries and whipped cream makes for a light, summery dessert.",
"Cupcakes are miniature cakes baked in individual paper liners and often topped with buttercream frosting.",
"The aroma of a freshly baked vanilla cake fills the kitchen with a warm, sweet scent.",
...
]

The concept stimuli in the list should not be redundant or repetitive. Each stimulus in the list represents a unique perspective (e.g., styles, contexts, examples, attributes, descriptions, usages) of the concept. The response MUST be in Python list format.
You should have at least 30 stimuli in the list. You should only output the Python list.
DO NOT print anything else such as "Here are ...", "Sure, ...", "Certainly, ...". Just return the list ["", "", ..., ..., ""].

)";

// ---------------------------------------------------------------------------
// Small text utilities.
// ---------------------------------------------------------------------------

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string fold(std::string_view s) {
  std::string out = normalize_whitespace(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string strip_wrapping_quotes(std::string s) {
  if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') ||
                        (s.front() == '\'' && s.back() == '\''))) {
    return s.substr(1, s.size() - 2);
  }
  return s;
}

std::string base64_encode(std::string_view bytes) {
  static const char table[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 3 <= bytes.size(); i += 3) {
    const unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                       (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                       static_cast<unsigned char>(bytes[i + 2]);
    out.push_back(table[(v >> 18) & 63]);
    out.push_back(table[(v >> 12) & 63]);
    out.push_back(table[(v >> 6) & 63]);
    out.push_back(table[v & 63]);
  }
  const std::size_t rest = bytes.size() - i;
  if (rest == 1) {
    const unsigned v = static_cast<unsigned char>(bytes[i]) << 16;
    out.push_back(table[(v >> 18) & 63]);
    out.push_back(table[(v >> 12) & 63]);
    out.append("==");
  } else if (rest == 2) {
    const unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                       (static_cast<unsigned char>(bytes[i + 1]) << 8);
    out.push_back(table[(v >> 18) & 63]);
    out.push_back(table[(v >> 12) & 63]);
    out.push_back(table[(v >> 6) & 63]);
    out.append("=");
  }
  return out;
}

// Data URL for an image file, or empty (with a warning) when unreadable.
// A missing image degrades to a prompts-only request.
std::string image_data_url(const std::string& path) {
  if (path.empty()) return {};
  std::string bytes;
  try {
    bytes = store::read_file_bytes(path);
  } catch (const Error& e) {
    warn(std::string("image omitted from request: ") + e.what());
    return {};
  }
  std::string mime = "image/png";
  const auto dot = path.rfind('.');
  if (dot != std::string::npos) {
    const std::string ext = fold(path.substr(dot + 1));
    if (ext == "jpg" || ext == "jpeg") mime = "image/jpeg";
    else if (ext == "webp") mime = "image/webp";
  }
  return "data:" + mime + ";base64," + base64_encode(bytes);
}

json chat_body(const std::string& model, const std::string& text, const std::string& image_url) {
  json content;
  if (image_url.empty()) {
    content = text;
  } else {
    json text_part = {{"type", "text"}, {"text", text}};
    json image_part = {{"type", "image_url"}, {"image_url", json{{"url", image_url}}}};
    content = json::array({std::move(text_part), std::move(image_part)});
  }
  json message = {{"role", "user"}, {"content", std::move(content)}};
  return {{"model", model},
          {"temperature", 0},
          {"messages", json::array({std::move(message)})}};
}

std::string append_repair(const std::string& body, const std::string& bad_content,
                          const std::string& reason) {
  json j = json::parse(body);
  if (!bad_content.empty()) {
    j["messages"].push_back({{"role", "assistant"}, {"content", bad_content}});
  }
  j["messages"].push_back(
      {{"role", "user"},
       {"content", "Your previous reply was rejected: " + reason +
                       " Respond again and follow the required output format exactly."}});
  return j.dump();
}

// The single source/target concept of a task: the explicit field when set,
// otherwise the bracketed span of the prompt.
std::string resolve_concept(const std::string& field, const std::string& prompt) {
  const std::string explicit_name = normalize_whitespace(field);
  if (!explicit_name.empty()) return explicit_name;
  const auto spans = bracketed_spans(prompt);
  if (spans.size() > 1) {
    throw ValidationFailed("prompt has " + std::to_string(spans.size()) +
                           " bracketed spans, at most one is allowed");
  }
  return spans.empty() ? std::string() : normalize_whitespace(spans.front());
}

std::string input_block(const EditTask& task, const std::string& source_concept,
                        const std::string& target_concept, bool has_image,
                        const char* answer_label) {
  std::string block;
  block += "Source Prompt: " + task.source_prompt + "\n";
  block += "Target Prompt: " + task.target_prompt + "\n";
  block += "Source Concept: \"" + source_concept + "\"\n";
  block += "Target Concept: \"" + target_concept + "\"\n";
  block += std::string("Source Image: ") + (has_image ? "(IMG)" : "(none)") + "\n";
  block += std::string(answer_label) + ":";
  return block;
}

std::vector<std::string> array_of_strings(const json& arr) {
  std::vector<std::string> out;
  out.reserve(arr.size());
  for (const auto& el : arr) {
    if (!el.is_string()) throw MalformedResponse("list contains a non-string item");
    out.push_back(el.get<std::string>());
  }
  return out;
}

// First balanced top-level [...] block, respecting quoted strings.
std::optional<std::string> first_bracket_block(const std::string& text) {
  std::size_t start = std::string::npos;
  int depth = 0;
  char quote = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quote != 0) {
      if (c == '\\') {
        ++i;
      } else if (c == quote) {
        quote = 0;
      }
      continue;
    }
    if (c == '"' || c == '\'') {
      if (depth > 0) quote = c;
    } else if (c == '[') {
      if (depth == 0) start = i;
      ++depth;
    } else if (c == ']') {
      if (depth > 0 && --depth == 0) return text.substr(start, i - start + 1);
    }
  }
  return std::nullopt;
}

std::vector<std::string> scan_quoted(const std::string& block) {
  std::vector<std::string> out;
  char quote = 0;
  std::string current;
  for (std::size_t i = 0; i < block.size(); ++i) {
    const char c = block[i];
    if (quote == 0) {
      if (c == '"' || c == '\'') {
        quote = c;
        current.clear();
      }
      continue;
    }
    if (c == '\\' && i + 1 < block.size()) {
      const char next = block[++i];
      if (next == 'n') current.push_back('\n');
      else if (next == 't') current.push_back('\t');
      else current.push_back(next);
      continue;
    }
    if (c == quote) {
      out.push_back(current);
      quote = 0;
      continue;
    }
    current.push_back(c);
  }
  return out;
}

}  // namespace

void ClientConfig::validate() const {
  if (max_retries < 0) throw ValidationFailed("max_retries must be >= 0");
  if (!(request_timeout > 0)) throw ValidationFailed("request_timeout must be positive");
  if (max_concurrent_requests < 1) throw ValidationFailed("max_concurrent_requests must be >= 1");
  if (endpoint_url.empty()) throw ValidationFailed("endpoint_url is empty");
  if (model_name.empty()) throw ValidationFailed("model_name is empty");
}

std::vector<std::string> bracketed_spans(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '[') {
      const std::size_t close = text.find(']', i + 1);
      if (close == std::string_view::npos) {
        throw ValidationFailed("unterminated '[' in prompt");
      }
      out.emplace_back(text.substr(i + 1, close - i - 1));
      i = close + 1;
    } else {
      ++i;
    }
  }
  return out;
}

std::vector<std::string> extract_string_list(const std::string& text) {
  const std::string trimmed = trim(text);
  json whole = json::parse(trimmed, nullptr, false);
  if (whole.is_array()) return array_of_strings(whole);

  const auto block = first_bracket_block(trimmed);
  if (!block) throw MalformedResponse("no list found in model output");
  json parsed = json::parse(*block, nullptr, false);
  if (parsed.is_array()) return array_of_strings(parsed);

  auto items = scan_quoted(*block);
  if (items.empty()) throw MalformedResponse("bracket block holds no quoted strings");
  return items;
}

std::string extract_chat_content(const std::string& response_body) {
  json j = json::parse(response_body, nullptr, false);
  if (j.is_discarded()) throw MalformedResponse("response body is not JSON");
  if (!j.contains("choices") || !j["choices"].is_array() || j["choices"].empty()) {
    throw MalformedResponse("response carries no choices");
  }
  const json& first = j["choices"][0];
  if (!first.contains("message") || !first["message"].contains("content") ||
      !first["message"]["content"].is_string()) {
    throw MalformedResponse("first choice carries no message content");
  }
  return first["message"]["content"].get<std::string>();
}

std::shared_ptr<Transport> make_http_transport(const ClientConfig& cfg) {
  cfg.validate();
  std::string key;
  if (!cfg.api_key_env.empty()) {
    const char* value = std::getenv(cfg.api_key_env.c_str());
    if (value == nullptr || *value == '\0') {
      throw MissingApiKey("environment variable " + cfg.api_key_env + " is not set");
    }
    key = value;
  }
  return std::make_shared<HttpTransport>(cfg.endpoint_url, std::move(key), cfg.request_timeout);
}

void run_bounded(std::size_t limit, std::size_t n_jobs,
                 const std::function<void(std::size_t)>& job) {
  if (n_jobs == 0) return;
  const std::size_t workers = std::max<std::size_t>(1, std::min(limit, n_jobs));

  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n_jobs) return;
      {
        std::lock_guard<std::mutex> lock(err_mu);
        if (first_error) return;
      }
      try {
        job(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };

  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    threads.reserve(workers);
    for (std::size_t t = 0; t < workers; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);
}

MiningClient::MiningClient(ClientConfig cfg, std::shared_ptr<Transport> transport)
    : cfg_(std::move(cfg)),
      transport_(std::move(transport)),
      jitter_rng_(std::random_device{}()) {
  cfg_.validate();
  if (!transport_) throw EmptyInput("mining client needs a transport");
  sleeper_ = [](double seconds) {
    std::this_thread::sleep_for(std::chrono::duration<double>(seconds));
  };
}

void MiningClient::set_sleeper(std::function<void(double)> sleeper) {
  sleeper_ = std::move(sleeper);
}

void MiningClient::backoff(int attempt) {
  // Replay transports answer instantly and deterministically; sleeping
  // between fixture responses would only slow CI down.
  if (!transport_->live()) return;
  double jitter;
  {
    std::lock_guard<std::mutex> lock(jitter_mu_);
    jitter = std::uniform_real_distribution<double>(-0.2, 0.2)(jitter_rng_);
  }
  sleeper_(std::ldexp(1.0, attempt - 1) * (1.0 + jitter));
}

HttpResponse MiningClient::post_with_retry(const std::string& path, const std::string& body) {
  for (int attempt = 0;; ++attempt) {
    HttpResponse response;
    try {
      requests_sent_.fetch_add(1);
      response = transport_->post({path, body});
    } catch (const TransportError&) {
      if (attempt >= cfg_.max_retries) throw;
      backoff(attempt + 1);
      continue;
    }
    if (response.status == 200) return response;
    const bool retryable = response.status == 429 || response.status >= 500;
    if (!retryable || attempt >= cfg_.max_retries) {
      std::string snippet = response.body.substr(0, 200);
      throw TransportError("HTTP " + std::to_string(response.status) + " from " + path +
                           (snippet.empty() ? "" : ": " + snippet));
    }
    backoff(attempt + 1);
  }
}

std::string MiningClient::chat_with_repair(
    std::string body, const std::function<void(const std::string&)>& check) {
  for (int attempt = 0;; ++attempt) {
    const HttpResponse response = post_with_retry(kChatPath, body);
    std::string content;
    try {
      content = extract_chat_content(response.body);
      check(content);
      return content;
    } catch (const TransportError&) {
      throw;
    } catch (const Error& e) {
      if (attempt >= cfg_.max_retries) throw;
      body = append_repair(body, content, e.what());
      backoff(attempt + 1);
    }
  }
}

std::string MiningClient::build_parse_request(const EditTask& task) const {
  const std::string source = resolve_concept(task.source_concept, task.source_prompt);
  const std::string target = resolve_concept(task.target_concept, task.target_prompt);
  if (source.empty()) {
    throw ValidationFailed(
        "task names no source concept; run rewrite_for_insertion on insertion tasks first");
  }
  const std::string image_url = image_data_url(task.image_path);
  const std::string text = std::string(kConceptListTemplate) +
                           input_block(task, source, target, !image_url.empty(), "Concept List");
  return chat_body(cfg_.model_name, text, image_url).dump();
}

std::string MiningClient::build_rewrite_request(const EditTask& task) const {
  const std::string target = resolve_concept(task.target_concept, task.target_prompt);
  if (target.empty()) throw ValidationFailed("insertion rewrite needs a target concept");
  const std::string image_url = image_data_url(task.image_path);
  const std::string text =
      std::string(kRewriteTemplate) +
      input_block(task, "", target, !image_url.empty(), "Re-written Source Prompt");
  return chat_body(cfg_.model_name, text, image_url).dump();
}

std::string MiningClient::build_stimuli_request(const std::string& concept_name) const {
  const std::string name = normalize_whitespace(concept_name);
  if (name.empty()) throw EmptyInput("concept name is empty");
  const std::string text =
      std::string(kStimulusTemplate) + "Concept: " + name + "\nConcept Stimuli:";
  return chat_body(cfg_.model_name, text, "").dump();
}

std::string MiningClient::build_embed_request(std::span<const std::string> texts) const {
  json input = json::array();
  for (const auto& t : texts) input.push_back(t);
  return json{{"model", cfg_.model_name}, {"input", std::move(input)}}.dump();
}

ConceptListResponse MiningClient::parse_concepts(const EditTask& task) {
  const std::string source = resolve_concept(task.source_concept, task.source_prompt);
  const std::string target = resolve_concept(task.target_concept, task.target_prompt);
  const std::string source_key = fold(source);
  const std::string target_key = fold(target);

  const auto validate = [&](const std::string& content) {
    const auto raw = extract_string_list(content);
    if (raw.size() < kMinConcepts) {
      throw ValidationFailed("concept list has " + std::to_string(raw.size()) +
                             " entries, at least " + std::to_string(kMinConcepts) +
                             " are required");
    }
    std::unordered_set<std::string> seen;
    for (std::size_t i = 0; i < raw.size(); ++i) {
      const std::string entry = normalize_whitespace(raw[i]);
      if (entry.empty()) {
        throw ValidationFailed("concept " + std::to_string(i + 1) + " is empty");
      }
      const std::string key = fold(entry);
      if (!seen.insert(key).second) {
        throw ValidationFailed("concept '" + entry + "' appears more than once");
      }
      if (!target_key.empty() && key == target_key) {
        throw ValidationFailed("target concept '" + entry + "' must not appear in the list");
      }
    }
    if (fold(normalize_whitespace(raw.front())) != source_key) {
      throw ValidationFailed("first concept '" + normalize_whitespace(raw.front()) +
                             "' does not equal the source concept '" + source + "'");
    }
  };

  const std::string content = chat_with_repair(build_parse_request(task), validate);
  ConceptListResponse out;
  for (const auto& entry : extract_string_list(content)) {
    out.concepts.push_back(normalize_whitespace(entry));
  }
  return out;
}

EditTask MiningClient::rewrite_for_insertion(const EditTask& task) {
  if (!normalize_whitespace(task.source_concept).empty()) {
    throw ValidationFailed("task already names a source concept; nothing to rewrite");
  }
  if (!bracketed_spans(task.source_prompt).empty()) {
    throw ValidationFailed("source prompt already carries a bracketed concept");
  }
  const std::string target = resolve_concept(task.target_concept, task.target_prompt);
  const std::string target_key = fold(target);

  std::string counterpart;
  std::string rewritten;
  const auto validate = [&](const std::string& content) {
    rewritten = strip_wrapping_quotes(trim(content));
    const auto spans = bracketed_spans(rewritten);
    if (spans.size() != 1) {
      throw ValidationFailed("rewritten prompt must contain exactly one bracketed concept, got " +
                             std::to_string(spans.size()));
    }
    counterpart = normalize_whitespace(spans.front());
    if (counterpart.empty()) throw ValidationFailed("bracketed counterpart is empty");
    if (fold(counterpart) == target_key) {
      throw ValidationFailed("counterpart '" + counterpart + "' equals the target concept");
    }
  };

  chat_with_repair(build_rewrite_request(task), validate);
  EditTask out = task;
  out.source_prompt = rewritten;
  out.source_concept = counterpart;
  return out;
}

namespace {

// Appends new stimuli in arrival order, deduplicating case-insensitively on
// whitespace-normalized text.
void merge_stimuli(const std::vector<std::string>& raw, std::vector<std::string>& out,
                   std::unordered_set<std::string>& seen) {
  for (const auto& r : raw) {
    const std::string entry = normalize_whitespace(r);
    if (entry.empty()) continue;
    if (seen.insert(fold(entry)).second) out.push_back(entry);
  }
}

}  // namespace

StimulusSetResponse MiningClient::synthesize_stimuli(const std::string& concept_name) {
  const std::string name = normalize_whitespace(concept_name);
  if (name.empty()) throw EmptyInput("concept name is empty");

  const auto shape_check = [](const std::string& content) {
    const auto raw = extract_string_list(content);
    if (raw.empty()) throw ValidationFailed("stimulus list is empty");
  };

  std::vector<std::string> stimuli;
  std::unordered_set<std::string> seen;
  const std::string first = chat_with_repair(build_stimuli_request(name), shape_check);
  merge_stimuli(extract_string_list(first), stimuli, seen);

  if (stimuli.size() < kMinStimuli) {
    json existing = json::array();
    for (const auto& s : stimuli) existing.push_back(s);
    const std::string topup_text =
        std::string(kStimulusTemplate) + "Concept: " + name + "\nConcept Stimuli: " +
        existing.dump() +
        "\n\nThe stimuli above were already collected for this concept but there are too few "
        "after removing duplicates. Generate 30 (THIRTY) additional concept stimuli that do "
        "not repeat any stimulus above. The response MUST be in Python list format. You "
        "should only output the Python list.";
    const std::string body = chat_body(cfg_.model_name, topup_text, "").dump();
    const std::string topup = chat_with_repair(body, shape_check);
    merge_stimuli(extract_string_list(topup), stimuli, seen);
  }

  if (stimuli.size() < kMinStimuli) {
    throw ValidationFailed("only " + std::to_string(stimuli.size()) +
                           " unique stimuli for '" + name + "' after top-up, " +
                           std::to_string(kMinStimuli) + " required");
  }
  return {name, std::move(stimuli)};
}

DenseMatrix MiningClient::embed_texts(std::span<const std::string> texts,
                                      store::EmbeddingCache* cache) {
  if (texts.empty()) throw EmptyInput("embed_texts needs at least one text");

  const std::size_t k = texts.size();
  std::vector<std::vector<float>> rows(k);
  std::vector<bool> filled(k, false);
  std::vector<std::string> misses;
  std::unordered_map<std::string, std::vector<std::size_t>> pending;

  for (std::size_t i = 0; i < k; ++i) {
    if (cache != nullptr) {
      if (auto hit = cache->get(cfg_.model_name, texts[i])) {
        rows[i] = std::move(*hit);
        filled[i] = true;
        continue;
      }
    }
    auto [it, inserted] = pending.try_emplace(texts[i]);
    if (inserted) misses.push_back(texts[i]);
    it->second.push_back(i);
  }

  if (!misses.empty()) {
    const HttpResponse response =
        post_with_retry(kEmbeddingsPath, build_embed_request(misses));
    json j = json::parse(response.body, nullptr, false);
    if (j.is_discarded() || !j.contains("data") || !j["data"].is_array()) {
      throw MalformedResponse("embedding response carries no data array");
    }
    const auto& data = j["data"];
    if (data.size() != misses.size()) {
      throw MalformedResponse("embedding response has " + std::to_string(data.size()) +
                              " rows for " + std::to_string(misses.size()) + " inputs");
    }
    std::vector<std::vector<float>> fetched(misses.size());
    std::vector<bool> seen(misses.size(), false);
    for (const auto& entry : data) {
      if (!entry.is_object() || !entry.contains("index") ||
          !entry["index"].is_number_unsigned() || !entry.contains("embedding") ||
          !entry["embedding"].is_array()) {
        throw MalformedResponse("embedding row needs an unsigned index and an embedding array");
      }
      const std::size_t idx = entry["index"].get<std::size_t>();
      if (idx >= misses.size() || seen[idx]) {
        throw MalformedResponse("embedding row index " + std::to_string(idx) +
                                " out of range or duplicated");
      }
      seen[idx] = true;
      auto& row = fetched[idx];
      row.reserve(entry["embedding"].size());
      for (const auto& x : entry["embedding"]) {
        if (!x.is_number()) throw MalformedResponse("embedding entry is not a number");
        row.push_back(x.get<float>());
      }
    }
    for (std::size_t m = 0; m < misses.size(); ++m) {
      if (fetched[m].size() != fetched[0].size()) {
        throw DimensionDrift("service returned lengths " + std::to_string(fetched[0].size()) +
                             " and " + std::to_string(fetched[m].size()) + " in one batch");
      }
    }
    for (std::size_t m = 0; m < misses.size(); ++m) {
      if (cache != nullptr) cache->put(cfg_.model_name, misses[m], fetched[m]);
      const auto& targets = pending[misses[m]];
      for (std::size_t pos = 0; pos < targets.size(); ++pos) {
        // The last consumer can move; earlier ones copy.
        if (pos + 1 == targets.size()) rows[targets[pos]] = std::move(fetched[m]);
        else rows[targets[pos]] = fetched[m];
        filled[targets[pos]] = true;
      }
    }
  }

  const std::size_t d = rows[0].size();
  for (std::size_t i = 0; i < k; ++i) {
    if (!filled[i]) throw MalformedResponse("embedding for input " + std::to_string(i) +
                                            " was never produced");
    if (rows[i].size() != d) {
      throw DimensionDrift("embedding rows disagree: " + std::to_string(d) + " vs " +
                           std::to_string(rows[i].size()));
    }
  }
  std::vector<float> flat;
  flat.reserve(k * d);
  for (const auto& row : rows) flat.insert(flat.end(), row.begin(), row.end());
  return DenseMatrix(k, d, std::move(flat));
}

}  // namespace colan::mining
