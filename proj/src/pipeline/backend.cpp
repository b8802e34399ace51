#include "b3d/pipeline/backend.hpp"

#include <cctype>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include "b3d/core/error.hpp"
#include "b3d/core/rng.hpp"
#include "b3d/trainer/degrade.hpp"

namespace b3d {

using nlohmann::json;

std::string_view to_string(RequestKind kind) { return kind == RequestKind::t2i ? "t2i" : "nvs"; }

json to_json(const GeneratorRequest& r) {
  json j = {{"kind", std::string(to_string(r.kind))}, {"prompt", r.prompt}, {"seed", r.seed}, {"n_views", r.n_views}};
  j["image"] = r.image.empty() ? json(nullptr) : json(base64_encode(r.image));
  return j;
}

GeneratorRequest request_from_json(const json& j) {
  try {
    GeneratorRequest r;
    const auto kind = j.at("kind").get<std::string>();
    if (kind != "t2i" && kind != "nvs") throw ProtocolError(fmt::format("unknown request kind '{}'", kind));
    r.kind = kind == "t2i" ? RequestKind::t2i : RequestKind::nvs;
    r.prompt = j.at("prompt").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.n_views = j.at("n_views").get<int>();
    if (!j.at("image").is_null()) r.image = base64_decode(j.at("image").get<std::string>());
    return r;
  } catch (const json::exception& e) {
    throw ProtocolError(fmt::format("generator request: {}", e.what()));
  }
}

json to_json(const GeneratorResponse& r) {
  json images = json::array();
  for (const auto& b : r.images) images.push_back(base64_encode(b));
  return {{"images", images}, {"generator_id", r.generator_id}, {"latency_ms", r.latency_ms}};
}

GeneratorResponse response_from_json(const json& j) {
  try {
    GeneratorResponse r;
    for (const auto& s : j.at("images")) r.images.push_back(base64_decode(s.get<std::string>()));
    r.generator_id = j.at("generator_id").get<std::string>();
    r.latency_ms = j.value("latency_ms", 0.0);
    return r;
  } catch (const json::exception& e) {
    throw ProtocolError(fmt::format("generator response: {}", e.what()));
  }
}

// ---- offline ----------------------------------------------------------------

ToyScene scene_for_prompt(std::string_view prompt, std::uint64_t seed) {
  std::vector<std::string> words;
  std::string w;
  for (char ch : prompt) {
    if (std::isalnum(static_cast<unsigned char>(ch))) {
      w.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    } else if (!w.empty()) {
      words.push_back(std::move(w));
      w.clear();
    }
  }
  if (!w.empty()) words.push_back(std::move(w));

  int shape = -1, hue = -1;
  for (const auto& word : words) {
    for (std::size_t s = 0; s < kAllShapes.size(); ++s) {
      const std::string_view name = to_string(kAllShapes[s]);
      if (word == name || word == std::string(name) + "s") shape = static_cast<int>(s);
    }
    for (int h = 0; h < kHueBins; ++h)
      if (word == hue_name(h)) hue = h;
  }
  const std::uint64_t ph = hash_string(prompt);
  if (shape < 0) shape = static_cast<int>(ph % kAllShapes.size());
  if (hue < 0) hue = static_cast<int>((ph / kAllShapes.size()) % kHueBins);
  Rng rng = make_rng(derive_seed(seed, hash_string("scene")));
  return sample_scene(shape * kHueBins + hue, rng);
}

OfflineBackend::OfflineBackend(Options options) : options_(options) {
  if (options_.view_size < 8) throw ConfigError(fmt::format("offline view_size must be >= 8 (got {})", options_.view_size));
  if (options_.blurred_views < 0 || options_.blurred_views > kViewsPerRecord)
    throw ConfigError(fmt::format("offline blurred_views must lie in [0, 4] (got {})", options_.blurred_views));
  if (options_.blur_sigma < 0) throw ConfigError("offline blur_sigma must be >= 0");
}

std::string OfflineBackend::id() const {
  std::string s = fmt::format("procedural-renderer@{}px", options_.view_size);
  if (options_.blurred_views > 0 && options_.blur_sigma > 0) s += fmt::format("+blur{}x{}", options_.blur_sigma, options_.blurred_views);
  return s;
}

GeneratorResponse OfflineBackend::call(const GeneratorRequest& request) {
  const auto start = std::chrono::steady_clock::now();
  const ToyScene scene = scene_for_prompt(request.prompt, request.seed);
  GeneratorResponse res;
  res.generator_id = id();
  if (request.kind == RequestKind::t2i) {
    res.images.push_back(encode_png(render_view(scene, kAzimuthsDeg[0], options_.view_size)));
  } else {
    if (request.n_views != kViewsPerRecord)
      throw RemoteError(fmt::format("offline nvs renders {} views, {} requested", kViewsPerRecord, request.n_views));
    MultiViewRecord r;
    r.views = render_views(scene, options_.view_size);
    if (options_.blurred_views > 0 && options_.blur_sigma > 0) {
      Rng rng = make_rng(derive_seed(request.seed, hash_string("nvs-blur")));
      r = degrade_views(r, options_.blur_sigma, options_.blurred_views, rng);
    }
    for (const auto& v : r.views) res.images.push_back(encode_png(v));
  }
  res.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return res;
}

// ---- http -------------------------------------------------------------------

std::pair<std::string, std::string> split_url(std::string_view url) {
  const auto scheme = url.find("://");
  if (scheme == std::string_view::npos || url.substr(0, scheme) != "http")
    throw ConfigError(fmt::format("endpoint '{}' is not an http:// URL", url));
  const auto path = url.find('/', scheme + 3);
  const std::string authority(url.substr(0, path));
  if (authority.size() == scheme + 3) throw ConfigError(fmt::format("endpoint '{}' has no host", url));
  std::string prefix = path == std::string_view::npos ? "" : std::string(url.substr(path));
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {authority, prefix};
}

json post_json(std::string_view base_url, std::string_view path, const json& body, std::chrono::milliseconds timeout,
               const RetryPolicy& retry) {
  const auto [authority, prefix] = split_url(base_url);
  const std::string full = prefix + std::string(path);
  const std::string payload = body.dump();
  auto backoff = retry.initial_backoff;
  std::string last;
  for (int attempt = 1; attempt <= std::max(1, retry.attempts); ++attempt) {
    httplib::Client cli(authority);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout - secs);
    cli.set_connection_timeout(static_cast<time_t>(secs.count()), static_cast<time_t>(usecs.count()));
    cli.set_read_timeout(static_cast<time_t>(secs.count()), static_cast<time_t>(usecs.count()));
    cli.set_write_timeout(static_cast<time_t>(secs.count()), static_cast<time_t>(usecs.count()));
    const auto res = cli.Post(full, payload, "application/json");
    bool transient = true;
    if (!res) {
      last = fmt::format("{}{}: {}", authority, full, httplib::to_string(res.error()));
    } else if (res->status >= 200 && res->status < 300) {
      try {
        return json::parse(res->body);
      } catch (const json::exception& e) {
        throw ProtocolError(fmt::format("{}{}: response is not JSON ({})", authority, full, e.what()));
      }
    } else {
      last = fmt::format("{}{}: HTTP {}", authority, full, res->status);
      transient = res->status == 429 || res->status >= 500;
    }
    if (!transient) break;
    if (attempt < retry.attempts) {
      spdlog::warn("{} (attempt {}/{}), retrying in {} ms", last, attempt, retry.attempts, backoff.count());
      std::this_thread::sleep_for(backoff);
      backoff = std::chrono::milliseconds(static_cast<long long>(static_cast<double>(backoff.count()) * retry.multiplier));
    }
  }
  throw RemoteError(last);
}

HttpGeneratorClient::HttpGeneratorClient(std::string base_url, std::chrono::milliseconds timeout, RetryPolicy retry)
    : base_url_(std::move(base_url)), timeout_(timeout), retry_(retry) {
  split_url(base_url_);
}

GeneratorResponse HttpGeneratorClient::call(const GeneratorRequest& request) {
  const auto start = std::chrono::steady_clock::now();
  GeneratorResponse res = response_from_json(
      post_json(base_url_, request.kind == RequestKind::t2i ? "/t2i" : "/nvs", to_json(request), timeout_, retry_));
  if (res.latency_ms <= 0)
    res.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return res;
}

// ---- stage calls ------------------------------------------------------------

namespace {

Image decode_payload(const Bytes& png, int view_size, std::string_view what) {
  Image img;
  try {
    img = decode_png(png);
  } catch (const IntegrityError& e) {
    throw ProtocolError(fmt::format("{}: {}", what, e.what()));
  }
  if (img.width != view_size || img.height != view_size) {
    spdlog::warn("{}: got {}x{} image, resizing to {}x{}", what, img.width, img.height, view_size, view_size);
    img = resize_area(img, view_size, view_size);
  }
  return img;
}

}  // namespace

Image t2i_generate(GeneratorClient& client, std::string_view prompt, std::uint64_t seed, int view_size) {
  GeneratorRequest req;
  req.kind = RequestKind::t2i;
  req.prompt = std::string(prompt);
  req.seed = seed;
  req.n_views = 1;
  const GeneratorResponse res = client.call(req);
  if (res.images.size() != 1)
    throw ProtocolError(fmt::format("t2i ({}): expected 1 image, got {}", client.id(), res.images.size()));
  return decode_payload(res.images[0], view_size, "t2i");
}

Views nvs_generate(GeneratorClient& client, const Image& image, std::string_view prompt, std::uint64_t seed,
                   int view_size, int n_views) {
  if (n_views != kViewsPerRecord)
    throw ParameterError(fmt::format("nvs: {} views requested; only {} are supported", n_views, kViewsPerRecord));
  GeneratorRequest req;
  req.kind = RequestKind::nvs;
  req.prompt = std::string(prompt);
  req.image = encode_png(image);
  req.seed = seed;
  req.n_views = n_views;
  const GeneratorResponse res = client.call(req);
  if (static_cast<int>(res.images.size()) != n_views)
    throw ProtocolError(fmt::format("nvs ({}): expected {} images, got {}", client.id(), n_views, res.images.size()));
  Views views;
  for (int v = 0; v < n_views; ++v)
    views[static_cast<std::size_t>(v)] = decode_payload(res.images[static_cast<std::size_t>(v)], view_size, "nvs");
  return views;
}

}  // namespace b3d
