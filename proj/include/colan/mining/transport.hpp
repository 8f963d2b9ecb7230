#pragma once

#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

namespace colan::mining {

struct HttpRequest {
  std::string path;
  std::string body;  // JSON payload; auth is added by the transport, never recorded
};

struct HttpResponse {
  int status = 0;
  std::string body;
};

class Transport {
 public:
  virtual ~Transport() = default;
  virtual HttpResponse post(const HttpRequest& request) = 0;
  // False for replay transports; callers skip retry backoff sleeps then.
  virtual bool live() const = 0;
};

// POSTs JSON to base_url + path. A non-empty api_key is sent as a bearer
// token; it stays inside this class and never reaches logs or cassettes.
class HttpTransport : public Transport {
 public:
  HttpTransport(std::string base_url, std::string api_key, double timeout_seconds);

  HttpResponse post(const HttpRequest& request) override;
  bool live() const override { return true; }

 private:
  std::string base_url_;
  std::string api_key_;
  double timeout_seconds_;
};

// Serves a recorded cassette in order. Each request must hit the path its
// interaction was recorded against; running past the end is a transport
// error, which keeps replays honest about request counts.
class ReplayTransport : public Transport {
 public:
  explicit ReplayTransport(const std::filesystem::path& cassette);

  HttpResponse post(const HttpRequest& request) override;
  bool live() const override { return false; }
  std::size_t remaining() const;

 private:
  struct Interaction {
    std::string path;
    int status = 200;
    std::string response_body;
  };
  std::vector<Interaction> interactions_;
  mutable std::mutex mu_;
  std::size_t next_ = 0;
};

// Forwards to an inner transport and appends every exchange to a cassette
// file, flushed on destruction or by an explicit flush().
class RecordingTransport : public Transport {
 public:
  RecordingTransport(std::shared_ptr<Transport> inner, std::filesystem::path cassette_path);
  ~RecordingTransport() override;

  HttpResponse post(const HttpRequest& request) override;
  bool live() const override { return inner_->live(); }
  void flush();

 private:
  struct Interaction {
    std::string path;
    std::string request_body;
    int status = 0;
    std::string response_body;
  };
  std::shared_ptr<Transport> inner_;
  std::filesystem::path path_;
  std::vector<Interaction> interactions_;
  mutable std::mutex mu_;
};

}  // namespace colan::mining
