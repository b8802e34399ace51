#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "b3d/core/codec.hpp"
#include "b3d/core/record.hpp"
#include "b3d/trainer/scene.hpp"

namespace b3d {

enum class RequestKind { t2i, nvs };
std::string_view to_string(RequestKind kind);

struct GeneratorRequest {
  RequestKind kind = RequestKind::t2i;
  std::string prompt;
  Bytes image;  // PNG of the conditioning view (nvs only)
  std::uint64_t seed = 0;
  int n_views = 1;
};

struct GeneratorResponse {
  std::vector<Bytes> images;  // PNG payloads
  std::string generator_id;
  double latency_ms = 0.0;
};

nlohmann::json to_json(const GeneratorRequest& request);
GeneratorRequest request_from_json(const nlohmann::json& j);
nlohmann::json to_json(const GeneratorResponse& response);
GeneratorResponse response_from_json(const nlohmann::json& j);

class GeneratorClient {
 public:
  virtual ~GeneratorClient() = default;
  virtual std::string id() const = 0;
  // Transport and service failures raise RemoteError; a malformed reply
  // raises ProtocolError.
  virtual GeneratorResponse call(const GeneratorRequest& request) = 0;
};

// Procedural stand-in for both services. t2i renders the prompt's scene at
// azimuth 0; nvs re-derives the scene from (prompt, seed), renders the four
// azimuths and optionally blurs some of them. Stateless, so a resumed run
// gets the same pixels.
class OfflineBackend : public GeneratorClient {
 public:
  struct Options {
    int view_size = 32;
    double blur_sigma = 0.0;
    int blurred_views = 0;
  };
  OfflineBackend() : OfflineBackend(Options{}) {}
  explicit OfflineBackend(Options options);
  // Names the options, since they change the pixels.
  std::string id() const override;
  GeneratorResponse call(const GeneratorRequest& request) override;

 private:
  Options options_;
};

// Shape and hue words in the prompt pick the scene; anything left open is
// hashed from the prompt. Size and hue jitter come from the seed.
ToyScene scene_for_prompt(std::string_view prompt, std::uint64_t seed);

struct RetryPolicy {
  int attempts = 3;
  std::chrono::milliseconds initial_backoff{200};
  double multiplier = 2.0;
};

// POSTs the request document to <base_url>/t2i or /nvs.
class HttpGeneratorClient : public GeneratorClient {
 public:
  HttpGeneratorClient(std::string base_url, std::chrono::milliseconds timeout = std::chrono::milliseconds(30000),
                      RetryPolicy retry = {});
  std::string id() const override { return base_url_; }
  GeneratorResponse call(const GeneratorRequest& request) override;

 private:
  std::string base_url_;
  std::chrono::milliseconds timeout_;
  RetryPolicy retry_;
};

// Splits "http://host:port/prefix" into scheme+authority and path prefix.
// Throws ConfigError when malformed.
std::pair<std::string, std::string> split_url(std::string_view url);

// POST JSON with retries on connection failures, 429 and 5xx. Other non-2xx
// codes fail at once. Returns the parsed body.
nlohmann::json post_json(std::string_view base_url, std::string_view path, const nlohmann::json& body,
                         std::chrono::milliseconds timeout, const RetryPolicy& retry);

// One decoded image, resized (with a warning) when it is not view_size square.
Image t2i_generate(GeneratorClient& client, std::string_view prompt, std::uint64_t seed, int view_size);
// Four views; the count must match the request exactly.
Views nvs_generate(GeneratorClient& client, const Image& image, std::string_view prompt, std::uint64_t seed,
                   int view_size, int n_views = kViewsPerRecord);

}  // namespace b3d
