#include "colan/mining/transport.hpp"

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <cmath>
#include <utility>

#include <json.hpp>

#include "colan/errors.hpp"
#include "colan/store.hpp"

namespace colan::mining {

using nlohmann::json;

HttpTransport::HttpTransport(std::string base_url, std::string api_key, double timeout_seconds)
    : base_url_(std::move(base_url)),
      api_key_(std::move(api_key)),
      timeout_seconds_(timeout_seconds) {}

HttpResponse HttpTransport::post(const HttpRequest& request) {
  // One client per request: no shared connection state, safe from any thread.
  httplib::Client cli(base_url_);
  const time_t sec = static_cast<time_t>(timeout_seconds_);
  const time_t usec = static_cast<time_t>((timeout_seconds_ - std::floor(timeout_seconds_)) * 1e6);
  cli.set_connection_timeout(sec, usec);
  cli.set_read_timeout(sec, usec);
  cli.set_write_timeout(sec, usec);

  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

  auto res = cli.Post(request.path, headers, request.body, "application/json");
  if (!res) {
    throw TransportError("POST " + base_url_ + request.path + " failed: " +
                         httplib::to_string(res.error()));
  }
  return {res->status, res->body};
}

ReplayTransport::ReplayTransport(const std::filesystem::path& cassette) {
  json j;
  try {
    j = json::parse(store::read_file_bytes(cassette));
  } catch (const json::parse_error& e) {
    throw SchemaViolation("cassette '" + cassette.string() + "' is not valid JSON: " + e.what());
  }
  if (!j.is_object() || !j.contains("interactions") || !j["interactions"].is_array()) {
    throw SchemaViolation("cassette needs a top-level 'interactions' array");
  }
  for (const auto& entry : j["interactions"]) {
    if (!entry.is_object() || !entry.contains("path") || !entry["path"].is_string()) {
      throw SchemaViolation("cassette interaction needs a string 'path'");
    }
    Interaction it;
    it.path = entry["path"].get<std::string>();
    it.status = entry.value("status", 200);
    if (!entry.contains("response_body")) {
      throw SchemaViolation("cassette interaction needs 'response_body'");
    }
    // Hand-written fixtures may embed the body as a JSON value instead of a
    // pre-serialized string.
    const auto& body = entry["response_body"];
    it.response_body = body.is_string() ? body.get<std::string>() : body.dump();
    interactions_.push_back(std::move(it));
  }
}

HttpResponse ReplayTransport::post(const HttpRequest& request) {
  std::lock_guard<std::mutex> lock(mu_);
  if (next_ >= interactions_.size()) {
    throw TransportError("replay cassette exhausted after " +
                         std::to_string(interactions_.size()) + " interactions (next: POST " +
                         request.path + ")");
  }
  const Interaction& it = interactions_[next_];
  if (it.path != request.path) {
    throw TransportError("replay mismatch: recorded POST " + it.path + ", got POST " +
                         request.path);
  }
  ++next_;
  return {it.status, it.response_body};
}

std::size_t ReplayTransport::remaining() const {
  std::lock_guard<std::mutex> lock(mu_);
  return interactions_.size() - next_;
}

RecordingTransport::RecordingTransport(std::shared_ptr<Transport> inner,
                                       std::filesystem::path cassette_path)
    : inner_(std::move(inner)), path_(std::move(cassette_path)) {
  if (!inner_) throw EmptyInput("recording transport needs an inner transport");
}

RecordingTransport::~RecordingTransport() {
  try {
    flush();
  } catch (...) {
    // Destructor must not throw; an explicit flush() surfaces write errors.
  }
}

HttpResponse RecordingTransport::post(const HttpRequest& request) {
  HttpResponse response = inner_->post(request);
  std::lock_guard<std::mutex> lock(mu_);
  interactions_.push_back({request.path, request.body, response.status, response.body});
  return response;
}

void RecordingTransport::flush() {
  std::lock_guard<std::mutex> lock(mu_);
  json list = json::array();
  for (const auto& it : interactions_) {
    json entry = {{"path", it.path}, {"status", it.status}};
    // Keep bodies as parsed JSON where possible so cassettes diff cleanly.
    json req = json::parse(it.request_body, nullptr, false);
    entry["request_body"] = req.is_discarded() ? json(it.request_body) : req;
    json resp = json::parse(it.response_body, nullptr, false);
    entry["response_body"] = resp.is_discarded() ? json(it.response_body) : resp;
    list.push_back(std::move(entry));
  }
  store::atomic_write_file(path_, json{{"interactions", std::move(list)}}.dump(2) + "\n");
}

}  // namespace colan::mining
