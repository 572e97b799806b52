#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <optional>
#include <string>

#include "pmap/autodiff.hpp"
#include "pmap/conditioning.hpp"
#include "pmap/loss.hpp"

namespace pmap {

enum class Conditioning { Embed, Inject };

struct NetConfig {
  int patch_size = 8;
  int dim = 64;
  int enc_blocks = 3;
  int dec_blocks = 3;
  int heads = 4;
  int mlp_ratio = 4;
  Conditioning variant = Conditioning::Inject;
  int inject_blocks = 1;  // n of inject-n
  bool tie_decoders = false;
  std::uint64_t seed = 0;

  std::string variant_name() const {
    return variant == Conditioning::Embed ? "embed" : "inject" + std::to_string(inject_blocks);
  }

  // "embed" or "injectN"
  void set_variant(const std::string& name) {
    if (name == "embed") {
      variant = Conditioning::Embed;
      return;
    }
    require(name.rfind("inject", 0) == 0 && name.size() > 6, "unknown conditioning variant: " + name);
    try {
      inject_blocks = std::stoi(name.substr(6));
    } catch (const std::exception&) {
      throw InvalidInput("unknown conditioning variant: " + name);
    }
    variant = Conditioning::Inject;
  }

  void validate() const {
    require(patch_size > 0 && dim > 0 && heads > 0 && mlp_ratio > 0, "net config: sizes must be positive");
    require(dim % heads == 0, "net config: dim must be divisible by heads");
    require(dim % 4 == 0, "net config: dim must be divisible by 4 for the 2D positional encoding");
    require(enc_blocks > 0 && dec_blocks > 0, "net config: need at least one encoder and decoder block");
    if (variant == Conditioning::Inject)
      require(inject_blocks >= 1 && inject_blocks <= std::min(enc_blocks, dec_blocks),
              "net config: inject-n needs 1 <= n <= number of blocks");
  }

  bool operator==(const NetConfig&) const = default;
};

// Named tensors with gradient buffers of identical shape. Addresses are stable.
template <typename Scalar>
class ParameterStore {
 public:
  using Param = ad::Parameter<Scalar>;

  Param& add(const std::string& name, ad::Matrix<Scalar> init) {
    require(!index_.count(name), "duplicate parameter " + name);
    params_.emplace_back(name, std::move(init));
    index_[name] = params_.size() - 1;
    return params_.back();
  }

  Param& get(const std::string& name) {
    auto it = index_.find(name);
    require(it != index_.end(), "unknown parameter " + name);
    return params_[it->second];
  }
  const Param& get(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), "unknown parameter " + name);
    return params_[it->second];
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.grad.setZero();
  }

 private:
  std::deque<Param> params_;
  std::map<std::string, std::size_t> index_;
};

// Network inputs for one pair. Optional members are the present modalities.
struct PairInputs {
  RgbImage img1, img2;
  std::optional<RayMap> rays1, rays2;
  std::optional<NormalizedDepthInput> depth1, depth2;
  std::optional<PoseToken> pose;
};

inline PairInputs make_inputs(const RgbImage& img1, const RgbImage& img2, const AuxiliaryBundle& aux) {
  PairInputs in{img1, img2, {}, {}, {}, {}, {}};
  if (aux.k1) {
    require(aux.k1->width == img1.width() && aux.k1->height == img1.height(), "K1 does not match image 1");
    in.rays1 = rays_from_intrinsics(*aux.k1);
  }
  if (aux.k2) {
    require(aux.k2->width == img2.width() && aux.k2->height == img2.height(), "K2 does not match image 2");
    in.rays2 = rays_from_intrinsics(*aux.k2);
  }
  if (aux.d1) {
    require(aux.d1->values.same_shape(img1), "D1 does not match image 1");
    if (aux.d1->valid_count() > 0) in.depth1 = normalize_depth_input(*aux.d1);
  }
  if (aux.d2) {
    require(aux.d2->values.same_shape(img2), "D2 does not match image 2");
    if (aux.d2->valid_count() > 0) in.depth2 = normalize_depth_input(*aux.d2);
  }
  if (aux.p12) in.pose = encode_pose(*aux.p12);
  return in;
}

template <typename Scalar>
class ToyNet {
 public:
  using Mat = ad::Matrix<Scalar>;
  using Tape = ad::Tape<Scalar>;
  using Var = ad::Var;

  // Head outputs: rows are patch tokens, columns patch pixels x channels.
  struct Forward {
    Var head1, head2;
    int w1 = 0, h1 = 0, w2 = 0, h2 = 0;
  };

  explicit ToyNet(const NetConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    build();
  }

  const NetConfig& config() const { return cfg_; }
  ParameterStore<Scalar>& params() { return params_; }
  const ParameterStore<Scalar>& params() const { return params_; }

  // Siamese encoder for one image with its optional rays and depth.
  Var encode(Tape& t, const RgbImage& img, const RayMap* rays, const NormalizedDepthInput* depth) {
    const int ps = cfg_.patch_size;
    require(img.width() > 0 && img.height() > 0 && img.width() % ps == 0 && img.height() % ps == 0,
            "encode: image dimensions must be positive multiples of the patch size");
    require(!rays || rays->same_shape(img), "encode: ray map shape mismatch");
    require(!depth || depth->dprime.same_shape(img), "encode: depth shape mismatch");
    const int gw = img.width() / ps, gh = img.height() / ps;
    Var x = linear(t, t.constant(patchify(img, ps).template cast<Scalar>()), "enc.patch");
    x = t.add(x, t.constant(positional_encoding(gw, gh)));

    const std::optional<Var> ray_in = rays ? std::optional(t.constant(patchify(*rays, ps).template cast<Scalar>())) : std::nullopt;
    const std::optional<Var> dep_in = depth ? std::optional(t.constant(patchify(*depth, ps).template cast<Scalar>())) : std::nullopt;
    auto inject = [&](Var v, const std::string& slot) {
      if (ray_in) v = t.add(v, mlp(t, *ray_in, "cond.ray." + slot));
      if (dep_in) v = t.add(v, mlp(t, *dep_in, "cond.depth." + slot));
      return v;
    };
    if (cfg_.variant == Conditioning::Embed) x = inject(x, "embed");

    for (int b = 0; b < cfg_.enc_blocks; ++b) {
      const std::string p = "enc.block" + std::to_string(b);
      x = t.add(x, self_attention(t, norm(t, x, p + ".ln1"), p + ".attn"));
      if (cfg_.variant == Conditioning::Inject && b < cfg_.inject_blocks) x = inject(x, "block" + std::to_string(b));
      x = t.add(x, mlp(t, norm(t, x, p + ".ln2"), p + ".mlp"));
    }
    return norm(t, x, "enc.ln");
  }

  // Twin decoders with cross-attention to the other branch's previous block.
  // Returned sequences carry the CLS token in row 0.
  std::pair<Var, Var> decode(Tape& t, Var f1, Var f2, const PoseToken* pose, std::pair<int, int> grid1,
                             std::pair<int, int> grid2) {
    require(t.value(f1).rows() == grid1.first * grid1.second && t.value(f2).rows() == grid2.first * grid2.second,
            "decode: token count does not match the patch grid");
    Var x1 = t.concat_rows(t.param(params_.get(branch(1) + ".cls")),
                           t.add(f1, t.constant(positional_encoding(grid1.first, grid1.second))));
    Var x2 = t.concat_rows(t.param(params_.get(branch(2) + ".cls")),
                           t.add(f2, t.constant(positional_encoding(grid2.first, grid2.second))));
    std::optional<Var> pose_emb;
    if (pose) {
      Mat feat(1, 12);
      const auto f = pose->features();
      for (int c = 0; c < 12; ++c) feat(0, c) = static_cast<Scalar>(f[c]);
      pose_emb = linear(t, t.constant(feat), "cond.pose.in");
      if (cfg_.variant == Conditioning::Embed) {
        const Var e = mlp(t, *pose_emb, "cond.pose.embed");
        x1 = t.add_to_row(x1, 0, e);
        x2 = t.add_to_row(x2, 0, e);
      }
    }
    for (int b = 0; b < cfg_.dec_blocks; ++b) {
      std::optional<Var> pose_b;
      if (pose_emb && cfg_.variant == Conditioning::Inject && b < cfg_.inject_blocks)
        pose_b = mlp(t, *pose_emb, "cond.pose.block" + std::to_string(b));
      const Var y1 = decoder_block(t, x1, x2, branch(1) + ".block" + std::to_string(b), pose_b);
      const Var y2 = decoder_block(t, x2, x1, branch(2) + ".block" + std::to_string(b), pose_b);
      x1 = y1;
      x2 = y2;
    }
    return {norm(t, x1, branch(1) + ".ln"), norm(t, x2, branch(2) + ".ln")};
  }

  // Linear heads on the patch tokens (CLS dropped).
  std::pair<Var, Var> heads(Tape& t, Var g1, Var g2) {
    const auto n1 = t.value(g1).rows() - 1, n2 = t.value(g2).rows() - 1;
    return {linear(t, t.slice_rows(g1, 1, n1), "head1"), linear(t, t.slice_rows(g2, 1, n2), "head2")};
  }

  Forward forward(Tape& t, const PairInputs& in) {
    const int ps = cfg_.patch_size;
    const Var f1 = encode(t, in.img1, in.rays1 ? &*in.rays1 : nullptr, in.depth1 ? &*in.depth1 : nullptr);
    const Var f2 = encode(t, in.img2, in.rays2 ? &*in.rays2 : nullptr, in.depth2 ? &*in.depth2 : nullptr);
    const auto [g1, g2] = decode(t, f1, f2, in.pose ? &*in.pose : nullptr,
                                 {in.img1.width() / ps, in.img1.height() / ps},
                                 {in.img2.width() / ps, in.img2.height() / ps});
    const auto [h1, h2] = heads(t, g1, g2);
    return {h1, h2, in.img1.width(), in.img1.height(), in.img2.width(), in.img2.height()};
  }

  // Unpacks head outputs into pointmaps and confidences C = 1 + exp(raw).
  PairPrediction prediction(const Tape& t, const Forward& f) const {
    PairPrediction p;
    p.x11 = PointMap(f.w1, f.h1, 1, 1);
    p.x21 = PointMap(f.w2, f.h2, 2, 1);
    p.x22 = PointMap(f.w2, f.h2, 2, 2);
    p.c11 = ConfidenceMap(f.w1, f.h1, 1.0);
    p.c21 = ConfidenceMap(f.w2, f.h2, 1.0);
    p.c22 = ConfidenceMap(f.w2, f.h2, 1.0);
    const Mat& a = t.value(f.head1);
    for_each_pixel(f.w1, f.h1, [&](int i, int j, Eigen::Index tok, Eigen::Index col) {
      p.x11.set(i, j, point(a, tok, col * 4));
      p.c11(i, j) = confidence(a(tok, col * 4 + 3));
    });
    const Mat& b = t.value(f.head2);
    for_each_pixel(f.w2, f.h2, [&](int i, int j, Eigen::Index tok, Eigen::Index col) {
      p.x21.set(i, j, point(b, tok, col * 8));
      p.x22.set(i, j, point(b, tok, col * 8 + 3));
      p.c21(i, j) = confidence(b(tok, col * 8 + 6));
      p.c22(i, j) = confidence(b(tok, col * 8 + 7));
    });
    return p;
  }

  // Seeds the head outputs with dL/dX and dL/dC (chained through C = 1 + exp(raw)).
  void seed_gradient(Tape& t, const Forward& f, const PairPrediction& p, const LossGradient& g, double scale = 1.0) {
    Mat d1 = Mat::Zero(t.value(f.head1).rows(), t.value(f.head1).cols());
    const Mat& a = t.value(f.head1);
    for_each_pixel(f.w1, f.h1, [&](int i, int j, Eigen::Index tok, Eigen::Index col) {
      for (int c = 0; c < 3; ++c) d1(tok, col * 4 + c) = static_cast<Scalar>(scale * g.d_x11(i, j)(c));
      d1(tok, col * 4 + 3) = static_cast<Scalar>(scale * g.d_c11(i, j) * dconf(a(tok, col * 4 + 3), p.c11(i, j)));
    });
    Mat d2 = Mat::Zero(t.value(f.head2).rows(), t.value(f.head2).cols());
    const Mat& b = t.value(f.head2);
    for_each_pixel(f.w2, f.h2, [&](int i, int j, Eigen::Index tok, Eigen::Index col) {
      for (int c = 0; c < 3; ++c) {
        d2(tok, col * 8 + c) = static_cast<Scalar>(scale * g.d_x21(i, j)(c));
        d2(tok, col * 8 + 3 + c) = static_cast<Scalar>(scale * g.d_x22(i, j)(c));
      }
      d2(tok, col * 8 + 6) = static_cast<Scalar>(scale * g.d_c21(i, j) * dconf(b(tok, col * 8 + 6), p.c21(i, j)));
      d2(tok, col * 8 + 7) = static_cast<Scalar>(scale * g.d_c22(i, j) * dconf(b(tok, col * 8 + 7), p.c22(i, j)));
    });
    t.seed(f.head1, d1);
    t.seed(f.head2, d2);
  }

  PairPrediction predict(const PairInputs& in) {
    Tape t(false);
    const auto f = forward(t, in);
    return prediction(t, f);
  }

  // 2D sin-cos encoding of patch-grid coordinates.
  Mat positional_encoding(int gw, int gh) const {
    const int q = cfg_.dim / 4;
    Mat pe(gw * gh, cfg_.dim);
    for (int py = 0; py < gh; ++py)
      for (int px = 0; px < gw; ++px) {
        const int r = py * gw + px;
        for (int k = 0; k < q; ++k) {
          const double omega = std::pow(100.0, -static_cast<double>(k) / q);
          pe(r, k) = static_cast<Scalar>(std::sin(px * omega));
          pe(r, q + k) = static_cast<Scalar>(std::cos(px * omega));
          pe(r, 2 * q + k) = static_cast<Scalar>(std::sin(py * omega));
          pe(r, 3 * q + k) = static_cast<Scalar>(std::cos(py * omega));
        }
      }
    return pe;
  }

  static constexpr double kMaxRawConfidence = 30.0;

 private:
  std::string branch(int b) const { return (cfg_.tie_decoders || b == 1) ? "dec1" : "dec2"; }

  static Vec3 point(const Mat& m, Eigen::Index tok, Eigen::Index col) {
    return {static_cast<double>(m(tok, col)), static_cast<double>(m(tok, col + 1)), static_cast<double>(m(tok, col + 2))};
  }
  static double confidence(Scalar raw) {
    return 1.0 + std::exp(std::clamp(static_cast<double>(raw), -kMaxRawConfidence, kMaxRawConfidence));
  }
  static double dconf(Scalar raw, double c) {
    return std::abs(static_cast<double>(raw)) < kMaxRawConfidence ? c - 1.0 : 0.0;
  }

  template <typename F>
  void for_each_pixel(int w, int h, F&& fn) const {
    const int ps = cfg_.patch_size, gw = w / ps;
    for (int j = 0; j < h; ++j)
      for (int i = 0; i < w; ++i)
        fn(i, j, static_cast<Eigen::Index>((j / ps) * gw + i / ps), static_cast<Eigen::Index>((j % ps) * ps + i % ps));
  }

  Var linear(Tape& t, Var x, const std::string& p) {
    return t.linear(x, t.param(params_.get(p + ".w")), t.param(params_.get(p + ".b")));
  }
  Var norm(Tape& t, Var x, const std::string& p) {
    return t.layer_norm(x, t.param(params_.get(p + ".g")), t.param(params_.get(p + ".b")));
  }
  Var mlp(Tape& t, Var x, const std::string& p) {
    return linear(t, t.gelu(linear(t, x, p + ".fc1")), p + ".fc2");
  }
  Var self_attention(Tape& t, Var x, const std::string& p) {
    const Var a = t.attention(linear(t, x, p + ".q"), linear(t, x, p + ".k"), linear(t, x, p + ".v"), cfg_.heads);
    return linear(t, a, p + ".o");
  }
  Var cross_attention(Tape& t, Var x, Var y, const std::string& p) {
    const Var a = t.attention(linear(t, x, p + ".q"), linear(t, y, p + ".k"), linear(t, y, p + ".v"), cfg_.heads);
    return linear(t, a, p + ".o");
  }

  // SA, CA against the other branch, pose on CLS, then MLP.
  Var decoder_block(Tape& t, Var x, Var other, const std::string& p, std::optional<Var> pose) {
    x = t.add(x, self_attention(t, norm(t, x, p + ".ln1"), p + ".sa"));
    x = t.add(x, cross_attention(t, norm(t, x, p + ".ln2"), norm(t, other, p + ".lny"), p + ".ca"));
    if (pose) x = t.add_to_row(x, 0, *pose);
    return t.add(x, mlp(t, norm(t, x, p + ".ln3"), p + ".mlp"));
  }

  // --- initialization --------------------------------------------------

  void build() {
    Rng rng(mix_seed(cfg_.seed, 0x7e7));
    const int d = cfg_.dim, hid = cfg_.dim * cfg_.mlp_ratio, ps2 = cfg_.patch_size * cfg_.patch_size;
    auto lin = [&](const std::string& p, int in, int out, double std = -1.0) {
      const double s = std > 0 ? std : 1.0 / std::sqrt(static_cast<double>(in));
      Mat w(in, out);
      for (Eigen::Index k = 0; k < w.size(); ++k) w.data()[k] = static_cast<Scalar>(s * truncated_normal(rng));
      params_.add(p + ".w", std::move(w));
      params_.add(p + ".b", Mat::Zero(1, out));
    };
    auto ln = [&](const std::string& p) {
      params_.add(p + ".g", Mat::Ones(1, d));
      params_.add(p + ".b", Mat::Zero(1, d));
    };
    auto mlp_params = [&](const std::string& p, int in, double out_std = -1.0) {
      lin(p + ".fc1", in, hid);
      lin(p + ".fc2", hid, d, out_std);
    };
    auto attn = [&](const std::string& p) {
      for (const char* n : {".q", ".k", ".v"}) lin(p + n, d, d);
      lin(p + ".o", d, d, 0.5 / std::sqrt(static_cast<double>(d)));
    };

    lin("enc.patch", ps2 * 3, d);
    for (int b = 0; b < cfg_.enc_blocks; ++b) {
      const std::string p = "enc.block" + std::to_string(b);
      ln(p + ".ln1");
      attn(p + ".attn");
      ln(p + ".ln2");
      mlp_params(p + ".mlp", d, 0.5 / std::sqrt(static_cast<double>(hid)));
    }
    ln("enc.ln");

    const double cond_std = 0.5 / std::sqrt(static_cast<double>(hid));
    std::vector<std::string> slots;
    if (cfg_.variant == Conditioning::Embed) slots.push_back("embed");
    else
      for (int b = 0; b < cfg_.inject_blocks; ++b) slots.push_back("block" + std::to_string(b));
    for (const auto& s : slots) {
      mlp_params("cond.ray." + s, ps2 * 3, cond_std);
      mlp_params("cond.depth." + s, ps2 * 2, cond_std);
    }
    lin("cond.pose.in", 12, d);
    for (const auto& s : slots) mlp_params("cond.pose." + s, d, cond_std);

    for (int br = 1; br <= (cfg_.tie_decoders ? 1 : 2); ++br) {
      const std::string dec = "dec" + std::to_string(br);
      Mat cls(1, d);
      for (Eigen::Index k = 0; k < cls.size(); ++k) cls.data()[k] = static_cast<Scalar>(0.02 * truncated_normal(rng));
      params_.add(dec + ".cls", std::move(cls));
      for (int b = 0; b < cfg_.dec_blocks; ++b) {
        const std::string p = dec + ".block" + std::to_string(b);
        ln(p + ".ln1");
        attn(p + ".sa");
        ln(p + ".ln2");
        ln(p + ".lny");
        attn(p + ".ca");
        ln(p + ".ln3");
        mlp_params(p + ".mlp", d, 0.5 / std::sqrt(static_cast<double>(hid)));
      }
      ln(dec + ".ln");
    }

    // Heads start near a fronto-parallel plane at depth 1 with C = 2.
    const double head_std = 0.02;
    lin("head1", d, ps2 * 4, head_std);
    lin("head2", d, ps2 * 8, head_std);
    auto& b1 = params_.get("head1.b").value;
    auto& b2 = params_.get("head2.b").value;
    for (int px = 0; px < ps2; ++px) {
      b1(0, px * 4 + 2) = Scalar(1);
      b2(0, px * 8 + 2) = Scalar(1);
      b2(0, px * 8 + 5) = Scalar(1);
    }
  }

  static double truncated_normal(Rng& rng) {
    double v;
    do v = rng.normal(); while (std::abs(v) > 2.0);
    return v;
  }

  NetConfig cfg_;
  ParameterStore<Scalar> params_;
};

}  // namespace pmap
