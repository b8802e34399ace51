#pragma once

#include <chrono>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "b3d/curation/curation.hpp"
#include "b3d/pipeline/backend.hpp"

namespace b3d {

// Prompt texts sent alongside the grid. The service is expected to hold the
// same texts; the id travels with every request so both sides agree.
struct PromptTemplates {
  std::map<std::string, std::string> text;  // id -> template

  const std::string& at(const std::string& id) const;  // ConfigError when missing
};

inline constexpr std::string_view kQualityTemplateId = "quality-v1";
inline constexpr std::string_view kShortCaptionTemplateId = "caption-short-v1";
inline constexpr std::string_view kLongCaptionTemplateId = "caption-long-v1";

PromptTemplates default_templates();
// JSON object {id: text}; entries override the defaults.
PromptTemplates load_templates(const std::filesystem::path& path);

struct CaptionerRequest {
  Bytes grid;  // PNG
  std::string mode;  // "quality", "short" or "long"
  std::string prompt_template_id;
  std::string prompt;
};

struct CaptionerResponse {
  std::string text;
  nlohmann::json tags = nlohmann::json::object();  // stored as-is under meta.remote_tags
};

nlohmann::json to_json(const CaptionerRequest& r);
CaptionerRequest captioner_request_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CaptionerResponse& r);
CaptionerResponse captioner_response_from_json(const nlohmann::json& j);

class CaptionerClient {
 public:
  virtual ~CaptionerClient() = default;
  virtual std::string id() const = 0;
  virtual CaptionerResponse score(const CaptionerRequest& request) = 0;
  virtual CaptionerResponse caption(const CaptionerRequest& request) = 0;
};

// POST <base>/score and <base>/caption.
class HttpCaptionerClient : public CaptionerClient {
 public:
  HttpCaptionerClient(std::string base_url, std::chrono::milliseconds timeout = std::chrono::milliseconds(60000),
                      RetryPolicy retry = {});
  std::string id() const override { return base_url_; }
  CaptionerResponse score(const CaptionerRequest& request) override;
  CaptionerResponse caption(const CaptionerRequest& request) override;

 private:
  std::string base_url_;
  std::chrono::milliseconds timeout_;
  RetryPolicy retry_;
};

// Answers from the pixels alone. score: heuristic label name and its
// rationale. caption: dominant hue and coverage of the grid, phrased to fit
// the requested mode. Lets the remote code paths run without a service.
class OfflineCaptioner : public CaptionerClient {
 public:
  explicit OfflineCaptioner(ScorerConfig config = {}) : config_(config) {}
  std::string id() const override { return "offline-captioner"; }
  CaptionerResponse score(const CaptionerRequest& request) override;
  CaptionerResponse caption(const CaptionerRequest& request) override;

 private:
  ScorerConfig config_;
};

// Label parsed from the reply; the full reply becomes the rationale. On a
// ScoringError the record is not touched.
QualityLabel remote_quality(CaptionerClient& client, const MultiViewRecord& record,
                            const PromptTemplates& templates = default_templates());

// Stores the budgeted caption in the field for `mode`. Empty reply ->
// CaptionError. Truncations are logged.
MultiViewRecord caption_record(CaptionerClient& client, const MultiViewRecord& record, CaptionMode mode,
                               const PromptTemplates& templates = default_templates());

}  // namespace b3d
