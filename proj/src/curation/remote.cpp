#include "b3d/curation/remote.hpp"

#include <cmath>
#include <numbers>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "b3d/core/codec.hpp"
#include "b3d/core/error.hpp"
#include "b3d/trainer/metrics.hpp"
#include "b3d/trainer/scene.hpp"

namespace b3d {

using nlohmann::json;

const std::string& PromptTemplates::at(const std::string& id) const {
  auto it = text.find(id);
  if (it == text.end()) throw ConfigError(fmt::format("no prompt template '{}'", id));
  return it->second;
}

PromptTemplates default_templates() {
  PromptTemplates t;
  t.text[std::string(kQualityTemplateId)] =
      "The image is a 2x2 grid showing one object from four viewpoints. Rate the set as a whole. "
      "Consider whether every view is sharp, whether the views show the same object with the same "
      "colours and shape, and whether the object looks plausible. Answer with one of: poor, relatively "
      "poor, borderline, relatively good, good, perfect. Then give a one-sentence reason.";
  t.text[std::string(kShortCaptionTemplateId)] =
      "The image is a 2x2 grid showing one object from four viewpoints. Describe the object in one or "
      "two sentences: what it is, its colour and its shape. Do not mention the grid or the viewpoints.";
  t.text[std::string(kLongCaptionTemplateId)] =
      "The image is a 2x2 grid showing one object from four viewpoints. Describe the object in a short "
      "paragraph: its category, colours, materials, parts and overall form, combining what the views "
      "show. Do not mention the grid or the viewpoints.";
  return t;
}

PromptTemplates load_templates(const std::filesystem::path& path) {
  PromptTemplates t = default_templates();
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
  if (!j.is_object()) throw ConfigError(fmt::format("{}: expected an object of id -> template", path.string()));
  for (const auto& [id, v] : j.items()) {
    if (!v.is_string() || v.get<std::string>().empty())
      throw ConfigError(fmt::format("{}: template '{}' must be a non-empty string", path.string(), id));
    t.text[id] = v.get<std::string>();
  }
  return t;
}

json to_json(const CaptionerRequest& r) {
  return {{"image", base64_encode(r.grid)},
          {"mode", r.mode},
          {"prompt_template_id", r.prompt_template_id},
          {"prompt", r.prompt}};
}

CaptionerRequest captioner_request_from_json(const json& j) {
  try {
    CaptionerRequest r;
    r.grid = base64_decode(j.at("image").get<std::string>());
    r.mode = j.at("mode").get<std::string>();
    r.prompt_template_id = j.at("prompt_template_id").get<std::string>();
    r.prompt = j.value("prompt", std::string{});
    return r;
  } catch (const json::exception& e) {
    throw ProtocolError(fmt::format("captioner request: {}", e.what()));
  }
}

json to_json(const CaptionerResponse& r) { return {{"text", r.text}, {"tags", r.tags}}; }

CaptionerResponse captioner_response_from_json(const json& j) {
  try {
    CaptionerResponse r;
    r.text = j.at("text").get<std::string>();
    if (j.contains("tags") && !j.at("tags").is_null()) r.tags = j.at("tags");
    return r;
  } catch (const json::exception& e) {
    throw ProtocolError(fmt::format("captioner response: {}", e.what()));
  }
}

HttpCaptionerClient::HttpCaptionerClient(std::string base_url, std::chrono::milliseconds timeout, RetryPolicy retry)
    : base_url_(std::move(base_url)), timeout_(timeout), retry_(retry) {
  split_url(base_url_);
}

CaptionerResponse HttpCaptionerClient::score(const CaptionerRequest& request) {
  return captioner_response_from_json(post_json(base_url_, "/score", to_json(request), timeout_, retry_));
}

CaptionerResponse HttpCaptionerClient::caption(const CaptionerRequest& request) {
  return captioner_response_from_json(post_json(base_url_, "/caption", to_json(request), timeout_, retry_));
}

namespace {

Image decode_grid(const CaptionerRequest& request) {
  try {
    return decode_png(request.grid);
  } catch (const IntegrityError& e) {
    throw ProtocolError(fmt::format("offline captioner: {}", e.what()));
  }
}

}  // namespace

CaptionerResponse OfflineCaptioner::score(const CaptionerRequest& request) {
  const Image grid = decode_grid(request);
  if (grid.width != grid.height || grid.width % 2 != 0)
    throw ProtocolError(fmt::format("offline captioner: {}x{} is not a 2x2 grid", grid.width, grid.height));
  const CompositeScore s = composite_score(split_grid(grid), config_);
  return {fmt::format("{}. {}", s.label.name(), s.label.rationale), nlohmann::json::object()};
}

CaptionerResponse OfflineCaptioner::caption(const CaptionerRequest& request) {
  const Image grid = decode_grid(request);
  double sx = 0, sy = 0, ink = 0;
  long long fg = 0;
  const long long total = static_cast<long long>(grid.width) * grid.height;
  for (int y = 0; y < grid.height; ++y)
    for (int x = 0; x < grid.width; ++x) {
      const double r = grid.at(x, y, 0) / 255.0, g = grid.at(x, y, 1) / 255.0, b = grid.at(x, y, 2) / 255.0;
      if (r >= kNearWhite && g >= kNearWhite && b >= kNearWhite) continue;
      ++fg;
      const auto hsv = rgb_to_hsv(r, g, b);
      sx += hsv[1] * std::cos(2 * std::numbers::pi * hsv[0]);
      sy += hsv[1] * std::sin(2 * std::numbers::pi * hsv[0]);
      ink += 1.0 - hsv[2];
    }
  if (fg == 0) return {"", nlohmann::json::object()};
  double hue = std::atan2(sy, sx) / (2 * std::numbers::pi);
  if (hue < 0) hue += 1.0;
  const std::string colour(hue_name(hue_bin(hue)));
  const double cover = static_cast<double>(fg) / static_cast<double>(total);
  const char* size = cover < 0.15 ? "small" : cover < 0.35 ? "medium-sized" : "large";
  std::string text = fmt::format("A {} {} object on a plain white background.", size, colour);
  if (request.mode == "long") {
    text += fmt::format(" It is seen from four sides at a slight elevation and fills about {:.0f}% of each view.",
                        100.0 * cover);
    text += fmt::format(" The surface is a single {} tone with {} shading from a light above.", colour,
                        ink / static_cast<double>(fg) > 0.3 ? "strong" : "soft");
  }
  return {text, nlohmann::json::object()};
}

namespace {

Bytes grid_png(const MultiViewRecord& record) {
  if (record.grid.empty()) throw PreconditionError(fmt::format("record {} has no grid image", record.record_id));
  return encode_png(record.grid);
}

}  // namespace

QualityLabel remote_quality(CaptionerClient& client, const MultiViewRecord& record, const PromptTemplates& templates) {
  CaptionerRequest req;
  req.grid = grid_png(record);
  req.mode = "quality";
  req.prompt_template_id = std::string(kQualityTemplateId);
  req.prompt = templates.at(req.prompt_template_id);
  const CaptionerResponse res = client.score(req);
  int score = 0;
  try {
    score = parse_quality_label(res.text);
  } catch (const ScoringError& e) {
    throw ScoringError(fmt::format("record {}: {}", record.record_id, e.what()));
  }
  return label_from_score(score, res.text);
}

MultiViewRecord caption_record(CaptionerClient& client, const MultiViewRecord& record, CaptionMode mode,
                               const PromptTemplates& templates) {
  const bool is_short = mode == CaptionMode::short_form;
  CaptionerRequest req;
  req.grid = grid_png(record);
  req.mode = is_short ? "short" : "long";
  req.prompt_template_id = std::string(is_short ? kShortCaptionTemplateId : kLongCaptionTemplateId);
  req.prompt = templates.at(req.prompt_template_id);
  const CaptionerResponse res = client.caption(req);
  const int budget = caption_budget(mode);
  Truncation fit = fit_caption(res.text, budget);
  if (fit.text.empty()) throw CaptionError(fmt::format("record {}: empty {} caption", record.record_id, req.mode));
  if (fit.truncated)
    spdlog::info("record {}: {} caption cut from {} to {} tokens", record.record_id, req.mode,
                 whitespace_tokens(res.text), whitespace_tokens(fit.text));
  MultiViewRecord out = record;
  (is_short ? out.caption_short : out.caption_long) = std::move(fit.text);
  if (!res.tags.empty()) out.meta["remote_tags"][req.mode] = res.tags;
  return out;
}

}  // namespace b3d
