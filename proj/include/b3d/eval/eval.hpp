#pragma once

#include <chrono>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "b3d/core/record.hpp"
#include "b3d/curation/curation.hpp"
#include "b3d/pipeline/backend.hpp"

namespace b3d {

// ---- embedders --------------------------------------------------------------

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::string id() const = 0;
  virtual int dim() const = 0;
  virtual Eigen::VectorXd image(const Image& img) const = 0;
  virtual Eigen::VectorXd text(std::string_view text) const = 0;
};

inline constexpr int kToyEmbedDim = 192;

// Image: 8x8 area means of ink (1 - luma), sat*cos(hue) and sat*sin(hue).
// Blank images map to e0.
Eigen::VectorXd toy_image_embedding(const Image& img);
// Signed hashed bag of lower-cased alphanumeric words. No words -> e0.
Eigen::VectorXd toy_text_embedding(std::string_view text);

// Toy pixel features for images and bag-of-words for text. The two halves
// live in unrelated spaces, so cross-modal scores sit at chance; useful for
// FID and as a floor.
class ToyEmbedder : public Embedder {
 public:
  std::string id() const override { return "toy-pixel+bow-192"; }
  int dim() const override { return kToyEmbedDim; }
  Eigen::VectorXd image(const Image& img) const override { return toy_image_embedding(img); }
  Eigen::VectorXd text(std::string_view t) const override { return toy_text_embedding(t); }
};

// Same image features; a prompt is embedded as the grid of its scene's
// prototype render, so text and images share one space.
class PromptRenderEmbedder : public Embedder {
 public:
  explicit PromptRenderEmbedder(int view_size = 32) : view_size_(view_size) {}
  std::string id() const override;
  int dim() const override { return kToyEmbedDim; }
  Eigen::VectorXd image(const Image& img) const override { return toy_image_embedding(img); }
  Eigen::VectorXd text(std::string_view t) const override;

 private:
  int view_size_;
};

// POST <base>/embed with {"kind": "image"|"text", "image"|"text": ...};
// reply {"vector": [...]} of exactly `dim` values.
class HttpEmbedder : public Embedder {
 public:
  HttpEmbedder(std::string base_url, int dim, std::chrono::milliseconds timeout = std::chrono::milliseconds(30000),
               RetryPolicy retry = {});
  std::string id() const override { return base_url_; }
  int dim() const override { return dim_; }
  Eigen::VectorXd image(const Image& img) const override;
  Eigen::VectorXd text(std::string_view t) const override;

 private:
  Eigen::VectorXd fetch(const nlohmann::json& body) const;
  std::string base_url_;
  int dim_;
  std::chrono::milliseconds timeout_;
  RetryPolicy retry_;
};

// Row i embeds item i. Empty input -> ParameterError; a vector of the wrong
// size or with non-finite values -> std::logic_error.
Eigen::MatrixXd embed_images(const Embedder& e, std::span<const Image> images, int workers = 1);
Eigen::MatrixXd embed_texts(const Embedder& e, std::span<const std::string> texts, int workers = 1);

// ---- retrieval and similarity -------------------------------------------------

// Percent of images whose paired text is the strict cosine top-1 over all
// texts; a tie counts as a miss. pairing[i] is the text row of image i.
double retrieval_precision(const Eigen::MatrixXd& image_vecs, const Eigen::MatrixXd& text_vecs,
                           std::span<const int> pairing);
// Mean paired cosine similarity, times 100.
double mean_similarity(const Eigen::MatrixXd& image_vecs, const Eigen::MatrixXd& text_vecs,
                       std::span<const int> pairing);

// ---- Frechet distance ---------------------------------------------------------

struct GaussianMoments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;  // unbiased, symmetrised
  long long n = 0;
};

// Rows are samples; needs at least 2.
GaussianMoments gaussian_moments(const Eigen::MatrixXd& samples);

// Eigenvalues of S_a below this count as 0 when taking S_a^1/2. The
// product's eigenvalues are only clamped at 0: they scale like lambda^2, so a
// 1e-10 cut there drops real mass from rank-deficient sets.
inline constexpr double kEigenClamp = 1e-10;

// |mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^1/2), via the eigenvalues of
// S_a^1/2 S_b S_a^1/2. Floored at 0.
double frechet_distance(const GaussianMoments& a, const GaussianMoments& b);

// ---- reports ----------------------------------------------------------------

struct SourceMetrics {
  long long n = 0;
  double retrieval_precision = 0.0;
  double mean_similarity = 0.0;
  std::optional<double> frechet;  // needs n >= 2
  friend bool operator==(const SourceMetrics&, const SourceMetrics&) = default;
};

struct EvalReport {
  std::string embedder;
  long long n_samples = 0;
  long long n_prompts = 0;
  long long n_reference = 0;
  double retrieval_precision = 0.0;
  double mean_similarity = 0.0;
  double frechet = 0.0;
  std::map<std::string, SourceMetrics> per_source;
  // per-source score counts, present only when every record was scored
  std::map<std::string, std::array<int, 6>> score_histogram;
  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

nlohmann::json to_json(const EvalReport& r);
EvalReport eval_report_from_json(const nlohmann::json& j);  // ProtocolError on bad input
std::string render_report_table(const EvalReport& r);

struct EvalSample {
  Image image;
  std::string prompt;
  DataSource source = DataSource::rendered_asset;
  std::optional<QualityLabel> quality;
};

// Retrieval runs over the distinct prompts of `samples`; Frechet distance is
// between image embeddings of the samples and of the reference set.
EvalReport eval_report(const Embedder& embedder, std::span<const EvalSample> samples,
                       std::span<const Image> reference, int workers = 1);
// Records are scored on their 2x2 grids.
EvalReport eval_report(const Embedder& embedder, std::span<const MultiViewRecord> records,
                       std::span<const Image> reference, int workers = 1);

// ---- benchmark table ------------------------------------------------------------

// Comparison table with one method per row and one decimal per value.
struct BenchmarkTable {
  std::vector<std::string> columns;
  std::vector<std::pair<std::string, std::vector<double>>> rows;
  friend bool operator==(const BenchmarkTable&, const BenchmarkTable&) = default;
};

BenchmarkTable parse_benchmark_csv(std::string_view text);  // ConfigError on bad input
std::string benchmark_csv(const BenchmarkTable& t);
std::string render_benchmark(const BenchmarkTable& t);
// A report as a one-row table: CLIP-R, CLIP and FID columns for its embedder.
BenchmarkTable benchmark_from_report(const EvalReport& r, std::string method);

}  // namespace b3d
