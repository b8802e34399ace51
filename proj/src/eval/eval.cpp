#include "b3d/eval/eval.hpp"

#include <cctype>
#include <cmath>
#include <numbers>
#include <set>
#include <sstream>
#include <stdexcept>

#include <Eigen/Eigenvalues>
#include <fmt/format.h>
#include <tbb/parallel_for.h>
#include <tbb/task_arena.h>

#include "b3d/core/codec.hpp"
#include "b3d/core/error.hpp"
#include "b3d/core/rng.hpp"
#include "b3d/trainer/scene.hpp"

namespace b3d {

using nlohmann::json;

// ---- embedders --------------------------------------------------------------

namespace {

Eigen::VectorXd unit_or_e0(Eigen::VectorXd v) {
  const double n = v.norm();
  if (n > 1e-12) return v / n;
  v.setZero();
  v[0] = 1.0;
  return v;
}

}  // namespace

Eigen::VectorXd toy_image_embedding(const Image& img) {
  constexpr int G = 8;
  Eigen::VectorXd v = Eigen::VectorXd::Zero(kToyEmbedDim);
  if (img.empty()) return unit_or_e0(v);
  Eigen::VectorXd count = Eigen::VectorXd::Zero(G * G);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const int cell = (y * G / img.height) * G + x * G / img.width;
      const double r = img.at(x, y, 0) / 255.0, g = img.at(x, y, 1) / 255.0, b = img.at(x, y, 2) / 255.0;
      const auto hsv = rgb_to_hsv(r, g, b);
      const double ang = 2.0 * std::numbers::pi * hsv[0];
      v[cell] += 1.0 - (0.299 * r + 0.587 * g + 0.114 * b);
      v[G * G + cell] += hsv[1] * std::cos(ang);
      v[2 * G * G + cell] += hsv[1] * std::sin(ang);
      count[cell] += 1.0;
    }
  for (int c = 0; c < G * G; ++c)
    if (count[c] > 0)
      for (int k = 0; k < 3; ++k) v[k * G * G + c] /= count[c];
  return unit_or_e0(std::move(v));
}

Eigen::VectorXd toy_text_embedding(std::string_view text) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(kToyEmbedDim);
  std::string w;
  auto flush = [&] {
    if (w.empty()) return;
    const std::uint64_t h = mix64(hash_string(w));
    v[static_cast<Eigen::Index>(h % kToyEmbedDim)] += (h >> 63) ? -1.0 : 1.0;
    w.clear();
  };
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isalnum(u))
      w.push_back(static_cast<char>(std::tolower(u)));
    else
      flush();
  }
  flush();
  return unit_or_e0(std::move(v));
}

std::string PromptRenderEmbedder::id() const { return fmt::format("toy-pixel+prompt-render@{}px-192", view_size_); }

Eigen::VectorXd PromptRenderEmbedder::text(std::string_view t) const {
  const ToyScene proto = condition_prototype(scene_for_prompt(t, 0).condition());
  return toy_image_embedding(assemble_grid(render_views(proto, view_size_)));
}

HttpEmbedder::HttpEmbedder(std::string base_url, int dim, std::chrono::milliseconds timeout, RetryPolicy retry)
    : base_url_(std::move(base_url)), dim_(dim), timeout_(timeout), retry_(retry) {
  split_url(base_url_);
  if (dim_ < 1) throw ConfigError("embedder dimension must be >= 1");
}

Eigen::VectorXd HttpEmbedder::fetch(const json& body) const {
  const json res = post_json(base_url_, "/embed", body, timeout_, retry_);
  try {
    const auto vec = res.at("vector").get<std::vector<double>>();
    if (static_cast<int>(vec.size()) != dim_)
      throw ProtocolError(fmt::format("embedder {}: expected {} values, got {}", base_url_, dim_, vec.size()));
    return Eigen::Map<const Eigen::VectorXd>(vec.data(), static_cast<Eigen::Index>(vec.size()));
  } catch (const json::exception& e) {
    throw ProtocolError(fmt::format("embedder {}: {}", base_url_, e.what()));
  }
}

Eigen::VectorXd HttpEmbedder::image(const Image& img) const {
  return fetch({{"kind", "image"}, {"image", base64_encode(encode_png(img))}});
}

Eigen::VectorXd HttpEmbedder::text(std::string_view t) const { return fetch({{"kind", "text"}, {"text", t}}); }

namespace {

template <class Item, class Fn>
Eigen::MatrixXd embed_rows(const Embedder& e, std::span<const Item> items, int workers, Fn fn) {
  if (items.empty()) throw ParameterError("nothing to embed");
  const int d = e.dim();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(items.size()), d);
  tbb::task_arena arena(std::max(1, workers));
  arena.execute([&] {
    tbb::parallel_for(std::size_t{0}, items.size(), [&](std::size_t i) {
      const Eigen::VectorXd v = fn(items[i]);
      if (v.size() != d)
        throw std::logic_error(fmt::format("embedder {} returned {} values for item {}, expected {}", e.id(), v.size(), i, d));
      if (!v.allFinite()) throw std::logic_error(fmt::format("embedder {} returned non-finite values", e.id()));
      out.row(static_cast<Eigen::Index>(i)) = v.transpose();
    });
  });
  return out;
}

}  // namespace

Eigen::MatrixXd embed_images(const Embedder& e, std::span<const Image> images, int workers) {
  return embed_rows(e, images, workers, [&](const Image& img) { return e.image(img); });
}

Eigen::MatrixXd embed_texts(const Embedder& e, std::span<const std::string> texts, int workers) {
  return embed_rows(e, texts, workers, [&](const std::string& t) { return e.text(t); });
}

// ---- retrieval and similarity -------------------------------------------------

namespace {

Eigen::MatrixXd row_normalised(const Eigen::MatrixXd& m) {
  Eigen::MatrixXd out = m;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double n = m.row(i).norm();
    if (n > 0) out.row(i) /= n;
  }
  return out;
}

void check_pairing(const Eigen::MatrixXd& img, const Eigen::MatrixXd& txt, std::span<const int> pairing) {
  if (img.rows() == 0 || txt.rows() == 0) throw ParameterError("retrieval needs at least one image and one text");
  if (img.cols() != txt.cols())
    throw ShapeError(fmt::format("image vectors have {} dims, text vectors {}", img.cols(), txt.cols()));
  if (static_cast<Eigen::Index>(pairing.size()) != img.rows())
    throw ShapeError(fmt::format("{} images but {} pairings", img.rows(), pairing.size()));
  for (int p : pairing)
    if (p < 0 || p >= txt.rows()) throw RangeError(fmt::format("pairing index {} outside [0, {})", p, txt.rows()));
}

}  // namespace

double retrieval_precision(const Eigen::MatrixXd& image_vecs, const Eigen::MatrixXd& text_vecs,
                           std::span<const int> pairing) {
  check_pairing(image_vecs, text_vecs, pairing);
  const Eigen::MatrixXd sims = row_normalised(image_vecs) * row_normalised(text_vecs).transpose();
  long long hits = 0;
  for (Eigen::Index i = 0; i < sims.rows(); ++i) {
    const int truth = pairing[static_cast<std::size_t>(i)];
    const double s = sims(i, truth);
    bool best = true;
    for (Eigen::Index j = 0; j < sims.cols() && best; ++j)
      if (j != truth && sims(i, j) >= s) best = false;
    hits += best;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(sims.rows());
}

double mean_similarity(const Eigen::MatrixXd& image_vecs, const Eigen::MatrixXd& text_vecs,
                       std::span<const int> pairing) {
  check_pairing(image_vecs, text_vecs, pairing);
  const Eigen::MatrixXd a = row_normalised(image_vecs), b = row_normalised(text_vecs);
  double total = 0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) total += a.row(i).dot(b.row(pairing[static_cast<std::size_t>(i)]));
  return 100.0 * total / static_cast<double>(a.rows());
}

// ---- Frechet distance ---------------------------------------------------------

GaussianMoments gaussian_moments(const Eigen::MatrixXd& samples) {
  if (samples.rows() < 2) throw ParameterError(fmt::format("moments need at least 2 samples (got {})", samples.rows()));
  if (!samples.allFinite()) throw ParameterError("moments: non-finite sample values");
  GaussianMoments m;
  m.n = samples.rows();
  m.mean = samples.colwise().mean().transpose();
  const Eigen::MatrixXd c = samples.rowwise() - m.mean.transpose();
  m.cov = (c.transpose() * c) / static_cast<double>(m.n - 1);
  m.cov = 0.5 * (m.cov + m.cov.transpose()).eval();
  return m;
}

double frechet_distance(const GaussianMoments& a, const GaussianMoments& b) {
  const auto d = a.mean.size();
  if (b.mean.size() != d || a.cov.rows() != d || a.cov.cols() != d || b.cov.rows() != d || b.cov.cols() != d)
    throw ShapeError(fmt::format("frechet distance: dimensions {} and {} differ", a.mean.size(), b.mean.size()));
  if (!a.mean.allFinite() || !b.mean.allFinite() || !a.cov.allFinite() || !b.cov.allFinite())
    throw ParameterError("frechet distance: non-finite moments");

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(0.5 * (a.cov + a.cov.transpose()));
  const Eigen::VectorXd la = ea.eigenvalues().unaryExpr([](double x) { return x > kEigenClamp ? std::sqrt(x) : 0.0; });
  const Eigen::MatrixXd sa = ea.eigenvectors() * la.asDiagonal() * ea.eigenvectors().transpose();
  Eigen::MatrixXd m = sa * b.cov * sa;
  m = 0.5 * (m + m.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> em(m, Eigen::EigenvaluesOnly);
  double tr_sqrt = 0;
  for (Eigen::Index i = 0; i < d; ++i) {
    const double x = em.eigenvalues()[i];
    if (x > 0) tr_sqrt += std::sqrt(x);
  }
  const double dist = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt;
  return std::max(0.0, dist);
}

// ---- reports ----------------------------------------------------------------

json to_json(const EvalReport& r) {
  json per = json::object();
  for (const auto& [src, m] : r.per_source) {
    per[src] = {{"n_samples", m.n},
                {"retrieval_precision", m.retrieval_precision},
                {"mean_similarity", m.mean_similarity},
                {"frechet", m.frechet ? json(*m.frechet) : json(nullptr)}};
  }
  json j = {{"embedder", r.embedder},
            {"n_samples", r.n_samples},
            {"n_prompts", r.n_prompts},
            {"n_reference", r.n_reference},
            {"retrieval_precision", r.retrieval_precision},
            {"mean_similarity", r.mean_similarity},
            {"frechet", r.frechet},
            {"per_source", per}};
  if (!r.score_histogram.empty()) j["score_histogram"] = r.score_histogram;
  return j;
}

EvalReport eval_report_from_json(const json& j) {
  try {
    EvalReport r;
    r.embedder = j.at("embedder").get<std::string>();
    r.n_samples = j.at("n_samples").get<long long>();
    r.n_prompts = j.at("n_prompts").get<long long>();
    r.n_reference = j.at("n_reference").get<long long>();
    r.retrieval_precision = j.at("retrieval_precision").get<double>();
    r.mean_similarity = j.at("mean_similarity").get<double>();
    r.frechet = j.at("frechet").get<double>();
    for (const auto& [src, m] : j.at("per_source").items()) {
      SourceMetrics s;
      s.n = m.at("n_samples").get<long long>();
      s.retrieval_precision = m.at("retrieval_precision").get<double>();
      s.mean_similarity = m.at("mean_similarity").get<double>();
      if (!m.at("frechet").is_null()) s.frechet = m.at("frechet").get<double>();
      r.per_source[src] = s;
    }
    if (j.contains("score_histogram")) r.score_histogram = j.at("score_histogram").get<decltype(r.score_histogram)>();
    if (r.retrieval_precision < 0 || r.retrieval_precision > 100)
      throw ProtocolError(fmt::format("eval report: retrieval_precision {} outside [0, 100]", r.retrieval_precision));
    return r;
  } catch (const json::exception& e) {
    throw ProtocolError(fmt::format("eval report: {}", e.what()));
  }
}

std::string render_report_table(const EvalReport& r) {
  std::string out = fmt::format("embedder {}  samples {}  prompts {}  reference {}\n", r.embedder, r.n_samples,
                                r.n_prompts, r.n_reference);
  out += fmt::format("{:<16} {:>6} {:>10} {:>10} {:>10}\n", "source", "n", "CLIP-R %", "CLIP", "FID");
  out += fmt::format("{:<16} {:>6} {:>10.1f} {:>10.1f} {:>10.4f}\n", "all", r.n_samples, r.retrieval_precision,
                     r.mean_similarity, r.frechet);
  for (const auto& [src, m] : r.per_source)
    out += fmt::format("{:<16} {:>6} {:>10.1f} {:>10.1f} {:>10}\n", src, m.n, m.retrieval_precision, m.mean_similarity,
                       m.frechet ? fmt::format("{:.4f}", *m.frechet) : std::string("-"));
  if (!r.score_histogram.empty()) {
    out += fmt::format("{:<16} {:>5} {:>5} {:>5} {:>5} {:>5} {:>5}\n", "scores", 0, 1, 2, 3, 4, 5);
    for (const auto& [src, h] : r.score_histogram)
      out += fmt::format("{:<16} {:>5} {:>5} {:>5} {:>5} {:>5} {:>5}\n", src, h[0], h[1], h[2], h[3], h[4], h[5]);
  }
  return out;
}

EvalReport eval_report(const Embedder& embedder, std::span<const EvalSample> samples, std::span<const Image> reference,
                       int workers) {
  if (samples.empty()) throw ParameterError("eval needs at least one sample");
  if (reference.size() < 2) throw PreconditionError(fmt::format("reference set needs at least 2 images (got {})", reference.size()));

  std::vector<std::string> prompts;
  std::map<std::string, int> prompt_row;
  std::vector<int> pairing;
  std::vector<Image> images;
  for (const auto& s : samples) {
    auto [it, fresh] = prompt_row.try_emplace(s.prompt, static_cast<int>(prompts.size()));
    if (fresh) prompts.push_back(s.prompt);
    pairing.push_back(it->second);
    images.push_back(s.image);
  }
  const Eigen::MatrixXd iv = embed_images(embedder, images, workers);
  const Eigen::MatrixXd tv = embed_texts(embedder, prompts, workers);
  const Eigen::MatrixXd rv = embed_images(embedder, reference, workers);
  const GaussianMoments ref = gaussian_moments(rv);

  EvalReport r;
  r.embedder = embedder.id();
  r.n_samples = static_cast<long long>(samples.size());
  r.n_prompts = static_cast<long long>(prompts.size());
  r.n_reference = static_cast<long long>(reference.size());
  r.retrieval_precision = retrieval_precision(iv, tv, pairing);
  r.mean_similarity = mean_similarity(iv, tv, pairing);
  r.frechet = samples.size() >= 2 ? frechet_distance(gaussian_moments(iv), ref) : 0.0;

  std::map<DataSource, std::vector<Eigen::Index>> by_source;
  for (std::size_t i = 0; i < samples.size(); ++i) by_source[samples[i].source].push_back(static_cast<Eigen::Index>(i));
  for (const auto& [src, rows] : by_source) {
    Eigen::MatrixXd sub(static_cast<Eigen::Index>(rows.size()), iv.cols());
    std::vector<int> sub_pair;
    for (std::size_t k = 0; k < rows.size(); ++k) {
      sub.row(static_cast<Eigen::Index>(k)) = iv.row(rows[k]);
      sub_pair.push_back(pairing[static_cast<std::size_t>(rows[k])]);
    }
    SourceMetrics m;
    m.n = static_cast<long long>(rows.size());
    m.retrieval_precision = retrieval_precision(sub, tv, sub_pair);
    m.mean_similarity = mean_similarity(sub, tv, sub_pair);
    if (rows.size() >= 2) m.frechet = frechet_distance(gaussian_moments(sub), ref);
    r.per_source[std::string(to_string(src))] = m;
  }

  const bool all_scored = std::all_of(samples.begin(), samples.end(), [](const auto& s) { return s.quality.has_value(); });
  if (all_scored) {
    for (DataSource s : kAllSources) r.score_histogram[std::string(to_string(s))] = {};
    for (const auto& s : samples) {
      const int q = s.quality->score;
      if (q < 0 || q > 5) throw ScoringError(fmt::format("score {} outside [0, 5]", q));
      ++r.score_histogram[std::string(to_string(s.source))][static_cast<std::size_t>(q)];
    }
  }
  return r;
}

EvalReport eval_report(const Embedder& embedder, std::span<const MultiViewRecord> records,
                       std::span<const Image> reference, int workers) {
  std::vector<EvalSample> samples;
  for (const auto& rec : records) {
    EvalSample s;
    s.image = rec.grid.empty() ? assemble_grid(rec.views) : rec.grid;
    s.prompt = rec.prompt;
    s.source = rec.source;
    s.quality = rec.quality;
    samples.push_back(std::move(s));
  }
  return eval_report(embedder, samples, reference, workers);
}

// ---- benchmark table ------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(std::move(cur));
  return out;
}

}  // namespace

BenchmarkTable parse_benchmark_csv(std::string_view text) {
  BenchmarkTable t;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (t.columns.empty()) {
      if (cells.size() < 2 || cells[0] != "method")
        throw ConfigError(fmt::format("benchmark table line {}: header must start with 'method'", lineno));
      t.columns.assign(cells.begin() + 1, cells.end());
      continue;
    }
    if (cells.size() != t.columns.size() + 1)
      throw ConfigError(fmt::format("benchmark table line {}: {} cells, expected {}", lineno, cells.size(),
                                    t.columns.size() + 1));
    std::vector<double> vals;
    for (std::size_t i = 1; i < cells.size(); ++i) {
      std::size_t used = 0;
      double v = 0;
      try {
        v = std::stod(cells[i], &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != cells[i].size() || cells[i].empty() || !std::isfinite(v))
        throw ConfigError(fmt::format("benchmark table line {}: '{}' is not a number", lineno, cells[i]));
      vals.push_back(v);
    }
    t.rows.emplace_back(cells[0], std::move(vals));
  }
  if (t.columns.empty()) throw ConfigError("benchmark table is empty");
  return t;
}

std::string benchmark_csv(const BenchmarkTable& t) {
  std::string out = "method";
  for (const auto& c : t.columns) out += "," + c;
  out += "\n";
  for (const auto& [method, vals] : t.rows) {
    out += method;
    for (double v : vals) out += fmt::format(",{:.1f}", v);
    out += "\n";
  }
  return out;
}

std::string render_benchmark(const BenchmarkTable& t) {
  std::size_t w0 = 6;
  for (const auto& [m, v] : t.rows) w0 = std::max(w0, m.size());
  std::vector<std::size_t> w;
  for (const auto& c : t.columns) w.push_back(std::max<std::size_t>(c.size(), 6));
  std::string out = fmt::format("{:<{}}", "method", w0);
  for (std::size_t i = 0; i < t.columns.size(); ++i) out += fmt::format("  {:>{}}", t.columns[i], w[i]);
  out += "\n";
  for (const auto& [m, vals] : t.rows) {
    out += fmt::format("{:<{}}", m, w0);
    for (std::size_t i = 0; i < vals.size(); ++i) out += fmt::format("  {:>{}.1f}", vals[i], w[i]);
    out += "\n";
  }
  return out;
}

BenchmarkTable benchmark_from_report(const EvalReport& r, std::string method) {
  BenchmarkTable t;
  t.columns = {fmt::format("CLIP-R ({})", r.embedder), fmt::format("CLIP ({})", r.embedder),
               fmt::format("FID ({})", r.embedder)};
  t.rows.emplace_back(std::move(method), std::vector<double>{r.retrieval_precision, r.mean_similarity, r.frechet});
  return t;
}

}  // namespace b3d
