#include "b3d/trainer/checkpoint.hpp"

#include <bit>
#include <cstring>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "b3d/core/error.hpp"
#include "b3d/diffusion/config.hpp"

namespace b3d {

namespace {

constexpr char kMagic[8] = {'B', '3', 'D', 'C', 'K', 'P', 'T', '1'};

class Writer {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <class U>
  void le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    le(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  Bytes take() { return std::move(out_); }

 private:
  Bytes out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) throw IntegrityError("checkpoint truncated");
  }
  template <class U>
  U le() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(in_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  std::string str() {
    const auto n = le<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::span<const std::uint8_t> bytes(std::size_t n) {
    need(n);
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

nlohmann::json model_to_json(const DenoiserConfig& c) {
  return {{"view_size", c.view_size}, {"hidden", c.hidden},         {"time_dim", c.time_dim},
          {"cond_dim", c.cond_dim},   {"n_conditions", c.n_conditions}, {"zero_head", c.zero_head},
          {"init_scale", c.init_scale}};
}

DenoiserConfig model_from_json(const nlohmann::json& j) {
  DenoiserConfig c;
  c.view_size = j.at("view_size").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.time_dim = j.at("time_dim").get<int>();
  c.cond_dim = j.at("cond_dim").get<int>();
  c.n_conditions = j.at("n_conditions").get<int>();
  c.zero_head = j.at("zero_head").get<bool>();
  c.init_scale = j.at("init_scale").get<double>();
  return c;
}

}  // namespace

Bytes encode_checkpoint(const Checkpoint& ck) {
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  const nlohmann::json meta{{"model", model_to_json(ck.params.config)},
                            {"schedule", schedule_to_json(ck.schedule)},
                            {"head_scale", !ck.params.head_scale.empty()},
                            {"step", ck.step},
                            {"seed", ck.seed}};
  w.str(meta.dump());
  w.le(static_cast<std::uint32_t>(DenoiserParams::kSlots));
  for (std::size_t i = 0; i < DenoiserParams::kSlots; ++i) {
    w.str(DenoiserParams::kNames[i]);
    w.le(std::uint32_t{2});
    w.le(static_cast<std::uint64_t>(ck.params.tensors[i].rows()));
    w.le(static_cast<std::uint64_t>(ck.params.tensors[i].cols()));
  }
  for (const auto& m : ck.params.tensors)
    for (Eigen::Index k = 0; k < m.size(); ++k) w.f64(m.data()[k]);
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> data) {
  Reader r(data);
  const auto magic = r.bytes(sizeof kMagic);
  if (std::memcmp(magic.data(), kMagic, sizeof kMagic) != 0) throw IntegrityError("not a B3DCKPT1 checkpoint");
  Checkpoint ck;
  bool scaled_head = false;
  try {
    const auto meta = nlohmann::json::parse(r.str());
    ck.params.config = model_from_json(meta.at("model"));
    ck.schedule = schedule_from_json(meta.at("schedule"));
    scaled_head = meta.at("head_scale").get<bool>();
    ck.step = meta.at("step").get<int>();
    ck.seed = meta.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(fmt::format("checkpoint metadata: {}", e.what()));
  }
  const auto n = r.le<std::uint32_t>();
  if (n != DenoiserParams::kSlots) throw IntegrityError(fmt::format("checkpoint holds {} tensors, expected {}", n, DenoiserParams::kSlots));
  std::array<std::pair<std::uint64_t, std::uint64_t>, DenoiserParams::kSlots> shapes;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string name = r.str();
    if (name != DenoiserParams::kNames[i]) throw IntegrityError(fmt::format("unexpected tensor '{}' at slot {}", name, i));
    if (r.le<std::uint32_t>() != 2) throw IntegrityError(fmt::format("tensor '{}' is not rank 2", name));
    shapes[i] = {r.le<std::uint64_t>(), r.le<std::uint64_t>()};
  }
  // Shapes must match what the stored config implies.
  const auto expected = DenoiserParams::shapes(ck.params.config);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& e = expected[i];
    if (static_cast<std::uint64_t>(e.first) != shapes[i].first || static_cast<std::uint64_t>(e.second) != shapes[i].second)
      throw IntegrityError(fmt::format("tensor '{}' shape does not match model config", DenoiserParams::kNames[i]));
    Eigen::MatrixXd m(static_cast<Eigen::Index>(shapes[i].first), static_cast<Eigen::Index>(shapes[i].second));
    ck.params.tensors[i] = std::move(m);
  }
  for (auto& m : ck.params.tensors)
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = r.f64();
  if (!r.done()) throw IntegrityError("trailing bytes after checkpoint payload");
  if (scaled_head) {
    try {
      ck.params.attach_schedule(build_schedule(ck.schedule));
    } catch (const ParameterError& e) {
      throw IntegrityError(fmt::format("checkpoint schedule: {}", e.what()));
    }
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  atomic_write(path, encode_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

}  // namespace b3d
