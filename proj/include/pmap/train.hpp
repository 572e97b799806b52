#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pmap/net.hpp"
#include "pmap/synth.hpp"

namespace pmap {

struct TrainConfig {
  int steps = 10000;
  int batch = 8;
  double lr = 0.04;
  double momentum = 0.9;
  double clip_norm = 1.0;  // global gradient norm; 0 disables
  int warmup = 200;
  bool cosine_decay = true;
  int crop_size = 32;           // training crops are crop_size x crop_size
  double offcenter_prob = 0.5;  // for intrinsics-bearing images
  double min_depth_keep = 0.05;
  int pool_size = 4000;  // distinct training pairs, 0 = fresh pair every sample
  SynthOptions synth{48, 48};
  LossOptions loss{0.2, 1.0, true};
  std::uint64_t seed = 0;
};

inline nlohmann::ordered_json to_json(const NetConfig& c) {
  return {{"patch_size", c.patch_size}, {"dim", c.dim},         {"enc_blocks", c.enc_blocks},
          {"dec_blocks", c.dec_blocks}, {"heads", c.heads},     {"mlp_ratio", c.mlp_ratio},
          {"variant", c.variant_name()}, {"tie_decoders", c.tie_decoders}, {"seed", c.seed}};
}

inline NetConfig net_config_from_json(const nlohmann::json& j) {
  NetConfig c;
  try {
    c.patch_size = j.at("patch_size").get<int>();
    c.dim = j.at("dim").get<int>();
    c.enc_blocks = j.at("enc_blocks").get<int>();
    c.dec_blocks = j.at("dec_blocks").get<int>();
    c.heads = j.at("heads").get<int>();
    c.mlp_ratio = j.at("mlp_ratio").get<int>();
    c.set_variant(j.at("variant").get<std::string>());
    c.tie_decoders = j.at("tie_decoders").get<bool>();
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("net config: ") + e.what());
  }
  c.validate();
  return c;
}

// One sample as fed to the network: cropped pair, the modality subset and
// the (possibly sparsified) auxiliary inputs restricted to that subset.
struct PreparedSample {
  SyntheticPair pair;
  ModalitySet subset;
  AuxiliaryBundle aux;
};

// Crops a pair to crop x crop. Images carrying intrinsics get a uniformly
// placed window with probability offcenter_prob, every other image a
// centered one. Depth priors are sparsified to a random keep ratio.
inline PreparedSample prepare_sample(const SyntheticPair& full, ModalitySet subset, int crop, double offcenter_prob,
                                     double min_keep, std::uint64_t seed) {
  require(crop <= full.img1.width() && crop <= full.img1.height() && crop <= full.img2.width() &&
              crop <= full.img2.height(),
          "prepare_sample: crop larger than the image");
  Rng rng(seed);
  auto window = [&](int w, int h, bool has_k) {
    if (has_k && rng.uniform() < offcenter_prob)
      return std::pair<int, int>(static_cast<int>(rng.index(w - crop + 1)), static_cast<int>(rng.index(h - crop + 1)));
    return std::pair<int, int>((w - crop) / 2, (h - crop) / 2);
  };
  const auto [x1, y1] = window(full.img1.width(), full.img1.height(), subset.has(Modality::K1));
  const auto [x2, y2] = window(full.img2.width(), full.img2.height(), subset.has(Modality::K2));
  PreparedSample s{full.crop(x1, y1, x2, y2, crop, crop), subset, {}};
  s.aux = s.pair.aux().restricted(subset);
  const double keep1 = rng.uniform(min_keep, 1.0), keep2 = rng.uniform(min_keep, 1.0);
  const auto seed1 = rng.next(), seed2 = rng.next();
  if (s.aux.d1 && s.aux.d1->valid_count() > 0) s.aux.d1 = sparsify(*s.aux.d1, keep1, seed1);
  if (s.aux.d2 && s.aux.d2->valid_count() > 0) s.aux.d2 = sparsify(*s.aux.d2, keep2, seed2);
  return s;
}

template <typename Scalar>
class Trainer {
 public:
  Trainer(ToyNet<Scalar>& net, TrainConfig cfg) : net_(net), cfg_(std::move(cfg)) {
    require(cfg_.batch > 0 && cfg_.steps >= 0 && cfg_.crop_size > 0, "train config: invalid sizes");
    require(cfg_.crop_size % net_.config().patch_size == 0, "train config: crop size must be a multiple of the patch size");
    for (const auto& p : net_.params()) velocity_.push_back(ad::Matrix<Scalar>::Zero(p.value.rows(), p.value.cols()));
  }

  const TrainConfig& config() const { return cfg_; }

  // Forward, loss, backward and one momentum update over `batch`. Sample k
  // draws its modality subset from mix_seed(seed, k).
  LossBreakdown train_step(const std::vector<SyntheticPair>& batch, double lr, std::uint64_t seed) {
    require(!batch.empty(), "train_step: empty batch");
    net_.params().zero_grad();
    LossBreakdown mean{};
    mean.alpha = cfg_.loss.alpha;
    mean.beta = cfg_.loss.beta;
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    for (std::size_t k = 0; k < batch.size(); ++k) {
      const auto subset = sample_modality_subset(mix_seed(seed, k));
      const auto s = prepare_sample(batch[k], subset, cfg_.crop_size, cfg_.offcenter_prob, cfg_.min_depth_keep,
                                    mix_seed(seed, k + 0x9e37));
      ad::Tape<Scalar> t;
      const auto f = net_.forward(t, make_inputs(s.pair.img1, s.pair.img2, s.aux));
      const auto pred = net_.prediction(t, f);
      LossGradient g;
      LossBreakdown l;
      try {
        l = total_loss(pred, s.pair.target(), cfg_.loss, g);
      } catch (const NumericDivergence& e) {
        throw NumericDivergence(std::string(e.what()) + " (sample " + std::to_string(k) + ", subset " +
                                subset.to_string() + ")");
      }
      net_.seed_gradient(t, f, pred, g, inv_b);
      t.backward();
      mean.l11 += l.l11 * inv_b;
      mean.l21 += l.l21 * inv_b;
      mean.l22 += l.l22 * inv_b;
      mean.total += l.total * inv_b;
    }
    apply_update(lr);
    return mean;
  }

  // Learning rate at `step`: linear warmup then optional cosine decay.
  double lr_at(int step) const {
    double lr = cfg_.lr;
    if (cfg_.warmup > 0 && step < cfg_.warmup) lr *= static_cast<double>(step + 1) / cfg_.warmup;
    else if (cfg_.cosine_decay && cfg_.steps > cfg_.warmup)
      lr *= 0.5 * (1.0 + std::cos(M_PI * (step - cfg_.warmup) / static_cast<double>(cfg_.steps - cfg_.warmup)));
    return lr;
  }

  // Full training run on seeded synthetic pairs. `on_step` sees every step.
  void run(const std::function<void(int, const LossBreakdown&)>& on_step = {}) {
    std::vector<SyntheticPair> pool;
    for (int k = 0; k < cfg_.pool_size; ++k) pool.push_back(gen_synthetic_pair(mix_seed(cfg_.seed, k), cfg_.synth));
    Rng rng(mix_seed(cfg_.seed, 0x7a1));
    std::uint64_t fresh = static_cast<std::uint64_t>(cfg_.pool_size);
    for (int step = 0; step < cfg_.steps; ++step) {
      std::vector<SyntheticPair> batch;
      for (int b = 0; b < cfg_.batch; ++b) {
        if (pool.empty()) batch.push_back(gen_synthetic_pair(mix_seed(cfg_.seed, fresh++), cfg_.synth));
        else batch.push_back(pool[rng.index(pool.size())]);
      }
      const auto l = train_step(batch, lr_at(step), mix_seed(cfg_.seed ^ 0x57e9, static_cast<std::uint64_t>(step)));
      if (on_step) on_step(step, l);
    }
  }

 private:
  void apply_update(double lr) {
    double sq = 0.0;
    for (const auto& p : net_.params()) sq += p.grad.template cast<double>().squaredNorm();
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw NumericDivergence("train_step: non-finite gradient");
    const double clip = (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;
    std::size_t k = 0;
    for (auto& p : net_.params()) {
      auto& v = velocity_[k++];
      v = static_cast<Scalar>(cfg_.momentum) * v + static_cast<Scalar>(clip) * p.grad;
      p.value -= static_cast<Scalar>(lr) * v;
    }
  }

  ToyNet<Scalar>& net_;
  TrainConfig cfg_;
  std::vector<ad::Matrix<Scalar>> velocity_;
};

// Checkpoint: magic, u32 version, u32 header length, JSON header (net
// config plus free-form metadata), u32 tensor count, then per tensor u32
// name length, name, u32 rows, u32 cols, float32 values. Little-endian.
namespace checkpoint {

inline constexpr char kMagic[8] = {'P', 'M', 'A', 'P', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kVersion = 1;

namespace detail {
inline void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}
inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw InvalidInput("checkpoint: truncated file");
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}
inline void put_f32(std::ostream& os, float f) {
  std::uint32_t u;
  std::memcpy(&u, &f, 4);
  put_u32(os, u);
}
inline float get_f32(std::istream& is) {
  const std::uint32_t u = get_u32(is);
  float f;
  std::memcpy(&f, &u, 4);
  return f;
}
}  // namespace detail

template <typename Scalar>
void save(const std::string& path, const ToyNet<Scalar>& net, const nlohmann::ordered_json& meta = {}) {
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), "checkpoint: cannot write " + path);
  nlohmann::ordered_json header{{"format", "pmap-toynet"}, {"config", to_json(net.config())}};
  if (!meta.is_null()) header["meta"] = meta;
  const std::string h = header.dump();
  os.write(kMagic, 8);
  detail::put_u32(os, kVersion);
  detail::put_u32(os, static_cast<std::uint32_t>(h.size()));
  os.write(h.data(), static_cast<std::streamsize>(h.size()));
  detail::put_u32(os, static_cast<std::uint32_t>(net.params().size()));
  for (const auto& p : net.params()) {
    detail::put_u32(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    detail::put_u32(os, static_cast<std::uint32_t>(p.value.rows()));
    detail::put_u32(os, static_cast<std::uint32_t>(p.value.cols()));
    for (Eigen::Index k = 0; k < p.value.size(); ++k) detail::put_f32(os, static_cast<float>(p.value.data()[k]));
  }
  require(static_cast<bool>(os), "checkpoint: write failed for " + path);
}

struct Header {
  NetConfig config;
  nlohmann::json meta;
};

inline Header read_header(std::istream& is) {
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) throw InvalidInput("checkpoint: bad magic");
  const auto version = detail::get_u32(is);
  require(version == kVersion, "checkpoint: unsupported version " + std::to_string(version));
  const auto len = detail::get_u32(is);
  require(len < (1u << 24), "checkpoint: header too large");
  std::string h(len, '\0');
  if (!is.read(h.data(), len)) throw InvalidInput("checkpoint: truncated header");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(h);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("checkpoint: malformed header: ") + e.what());
  }
  require(j.contains("config"), "checkpoint: header lacks a config");
  return {net_config_from_json(j["config"]), j.value("meta", nlohmann::json())};
}

template <typename Scalar>
ToyNet<Scalar> load(const std::string& path, nlohmann::json* meta = nullptr) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InvalidInput("checkpoint: cannot open " + path + " (run train-toy first)");
  const auto header = read_header(is);
  if (meta) *meta = header.meta;
  ToyNet<Scalar> net(header.config);
  const auto count = detail::get_u32(is);
  require(count == net.params().size(), "checkpoint: parameter count does not match the config");
  for (std::uint32_t n = 0; n < count; ++n) {
    const auto len = detail::get_u32(is);
    require(len < 4096, "checkpoint: parameter name too long");
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw InvalidInput("checkpoint: truncated file");
    require(net.params().contains(name), "checkpoint: unknown parameter " + name);
    auto& p = net.params().get(name);
    const auto rows = detail::get_u32(is), cols = detail::get_u32(is);
    require(rows == p.value.rows() && cols == p.value.cols(), "checkpoint: shape mismatch for " + name);
    for (Eigen::Index k = 0; k < p.value.size(); ++k) p.value.data()[k] = static_cast<Scalar>(detail::get_f32(is));
  }
  return net;
}

}  // namespace checkpoint

}  // namespace pmap
