#include "hopmix/mixer.hpp"

#include <cmath>

namespace hopmix {

void MixerConfig::validate() const {
  if (image_size <= 0 || patch_size <= 0 || channels_in <= 0)
    throw ConfigError("model: image/patch/channel dims must be positive");
  if (image_size % patch_size != 0)
    throw ConfigError("model: image_size must be divisible by patch_size");
  if (hidden_dim <= 0 || token_mlp_dim <= 0 || channel_mlp_dim <= 0)
    throw ConfigError("model: mlp dims must be positive");
  if (depth < 0) throw ConfigError("model: depth must be >= 0");
  if (num_classes < 2) throw ConfigError("model: num_classes must be >= 2");
  if (h_r <= 0.0) throw ConfigError("model: h_r must be positive");
  if (n_iter < 0) throw ConfigError("model: n_iter must be >= 0");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model: dropout must be in [0,1)");
  if (!(specnorm_coeff > 0.0 && specnorm_coeff < 1.0))
    throw ConfigError("specnorm: coeff must lie in (0,1)");
  if (specnorm_n_power < 1) throw ConfigError("specnorm: n_power must be >= 1");
}

MixerConfig micro_preset() {
  MixerConfig cfg;
  cfg.image_size = 16;
  cfg.patch_size = 4;
  cfg.channels_in = 1;
  cfg.hidden_dim = 64;
  cfg.depth = 4;
  cfg.token_mlp_dim = 32;
  cfg.channel_mlp_dim = 256;
  return cfg;
}

MixerConfig tiny_preset() {
  MixerConfig cfg;
  cfg.image_size = 32;
  cfg.patch_size = 4;
  cfg.channels_in = 3;
  cfg.hidden_dim = 128;
  cfg.depth = 6;
  cfg.token_mlp_dim = 64;
  cfg.channel_mlp_dim = 512;
  return cfg;
}

ChannelMlp::ChannelMlp(const std::string& prefix, std::size_t c, std::size_t d_c,
                       std::uint64_t seed, double drop)
    : ln(prefix + ".ln", c),
      fc1(prefix + ".fc1", c, d_c, seed),
      fc2(prefix + ".fc2", d_c, c, seed),
      drop_p(drop) {}

Tensor ChannelMlp::forward(Fwd& f, const Tensor& x) {
  Tensor y = fc1.forward(f, ln.forward(f, x));
  y = gelu(y);
  y = dropout(f, y, drop_p);
  y = fc2.forward(f, y);
  y = dropout(f, y, drop_p);
  return y;
}

VanillaTokenMlp::VanillaTokenMlp(const std::string& prefix, std::size_t d_vis, std::size_t d_mid,
                                 std::uint64_t seed, double drop)
    : ln(prefix + ".ln", d_vis),
      fc1(prefix + ".fc1", d_vis, d_mid, seed),
      fc2(prefix + ".fc2", d_mid, d_vis, seed),
      drop_p(drop) {}

Tensor VanillaTokenMlp::forward(Fwd& f, const Tensor& v) {
  Tensor y = fc1.forward(f, ln.forward(f, v));
  y = gelu(y);
  y = dropout(f, y, drop_p);
  y = fc2.forward(f, y);
  y = dropout(f, y, drop_p);
  return add(v, y);
}

Tensor MixerBlock::forward(Fwd& f, const Tensor& tokens, FpaTrace* trace, int n_override) {
  Tensor vt = transpose(tokens);  // [C x S], rows mix over tokens
  Tensor mixed = (kind == TokenMixerKind::IMlp) ? imlp.forward(f, vt, trace, n_override)
                                                : vanilla.forward(f, vt);
  Tensor u = transpose(mixed);
  return add(u, channel.forward(f, u));
}

void MixerBlock::collect(std::vector<Parameter*>& out) {
  if (kind == TokenMixerKind::IMlp)
    imlp.collect(out);
  else
    vanilla.collect(out);
  channel.collect(out);
}

Tensor extract_patches(const MixerConfig& cfg, std::span<const double> image) {
  const std::size_t c = static_cast<std::size_t>(cfg.channels_in);
  const std::size_t hw = static_cast<std::size_t>(cfg.image_size);
  const std::size_t p = static_cast<std::size_t>(cfg.patch_size);
  if (image.size() != c * hw * hw) throw ShapeError("extract_patches: image size mismatch");
  const std::size_t grid = hw / p;
  const std::size_t s = grid * grid;
  const std::size_t pix = c * p * p;
  Tensor out({s, pix});
  for (std::size_t gy = 0; gy < grid; ++gy) {
    for (std::size_t gx = 0; gx < grid; ++gx) {
      const std::size_t token = gy * grid + gx;
      std::size_t k = 0;
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t py = 0; py < p; ++py)
          for (std::size_t px = 0; px < p; ++px) {
            const std::size_t row = gy * p + py, col = gx * p + px;
            out.at(token, k++) = image[(ch * hw + row) * hw + col];
          }
    }
  }
  return out;
}

MixerModel::MixerModel(const MixerConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const auto s = static_cast<std::size_t>(cfg_.tokens());
  const auto c = static_cast<std::size_t>(cfg_.hidden_dim);
  stem_ = Linear("stem", static_cast<std::size_t>(cfg_.patch_pixels()), c, cfg_.seed);
  blocks_.resize(static_cast<std::size_t>(cfg_.depth));
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string prefix = "blocks." + std::to_string(i);
    MixerBlock& b = blocks_[i];
    b.kind = cfg_.token_mixer;
    if (b.kind == TokenMixerKind::IMlp) {
      b.imlp = IMlpModule(prefix + ".token_mix", s, static_cast<std::size_t>(cfg_.token_mlp_dim),
                          static_cast<std::size_t>(cfg_.hidden_mixer_dim()), cfg_.seed,
                          cfg_.specnorm_coeff, cfg_.specnorm_n_power, cfg_.specnorm_mode,
                          cfg_.dropout, cfg_.n_iter);
    } else {
      b.vanilla = VanillaTokenMlp(prefix + ".token_mix", s,
                                  static_cast<std::size_t>(cfg_.token_mlp_dim), cfg_.seed,
                                  cfg_.dropout);
    }
    b.channel = ChannelMlp(prefix + ".channel_mlp", c,
                           static_cast<std::size_t>(cfg_.channel_mlp_dim), cfg_.seed, cfg_.dropout);
  }
  norm_ = LayerNorm("norm", c);
  head_ = Linear("head", c, static_cast<std::size_t>(cfg_.num_classes), cfg_.seed);

  stem_.collect(params_);
  for (MixerBlock& b : blocks_) b.collect(params_);
  norm_.collect(params_);
  head_.collect(params_);
}

Tensor MixerModel::patch_embed(Fwd& f, std::span<const double> image) {
  return stem_.forward(f, extract_patches(cfg_, image));
}

Tensor MixerModel::forward(Fwd& f, std::span<const double> image, std::vector<FpaTrace>* traces,
                           int probe_n) {
  Tensor x = patch_embed(f, image);
  for (MixerBlock& b : blocks_) {
    FpaTrace trace;
    FpaTrace* tp = (traces && b.kind == TokenMixerKind::IMlp) ? &trace : nullptr;
    x = b.forward(f, x, tp, tp ? probe_n : -1);
    if (tp) traces->push_back(std::move(trace));
  }
  x = norm_.forward(f, x);
  Tensor pooled = mean_rows(x);
  return head_.forward(f, pooled);
}

Parameter* MixerModel::find(const std::string& name) {
  for (Parameter* p : params_)
    if (p->name == name) return p;
  return nullptr;
}

std::vector<std::pair<std::string, Tensor*>> MixerModel::named_buffers() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    if (blocks_[i].kind != TokenMixerKind::IMlp) continue;
    const std::string prefix = "blocks." + std::to_string(i) + ".token_mix";
    out.emplace_back(prefix + ".fc_sn1.u", &blocks_[i].imlp.fc_sn1.u);
    out.emplace_back(prefix + ".fc_sn2.u", &blocks_[i].imlp.fc_sn2.u);
  }
  return out;
}

void MixerModel::zero_grads() {
  for (Parameter* p : params_) p->zero_grad();
}

void MixerModel::set_freeze_norm(bool frozen) {
  for (MixerBlock& b : blocks_)
    if (b.kind == TokenMixerKind::IMlp) b.imlp.set_freeze_norm(frozen);
}

void MixerModel::converge_norms(int passes) {
  for (MixerBlock& b : blocks_)
    if (b.kind == TokenMixerKind::IMlp) b.imlp.converge_norms(passes);
}

std::size_t count_params(const MixerConfig& cfg) {
  const auto s = static_cast<std::size_t>(cfg.tokens());
  const auto c = static_cast<std::size_t>(cfg.hidden_dim);
  const auto ds = static_cast<std::size_t>(cfg.token_mlp_dim);
  const auto dc = static_cast<std::size_t>(cfg.channel_mlp_dim);
  const auto dh = static_cast<std::size_t>(cfg.hidden_mixer_dim());
  const auto k = static_cast<std::size_t>(cfg.num_classes);
  const auto pix = static_cast<std::size_t>(cfg.patch_pixels());

  std::size_t per_block = 2 * s                 // token ln
                          + ds * s + ds         // token fc1
                          + s * ds + s          // token fc2
                          + 2 * c               // channel ln
                          + dc * c + dc         // channel fc1
                          + c * dc + c;         // channel fc2
  if (cfg.token_mixer == TokenMixerKind::IMlp) {
    per_block += dh * ds + dh + ds * dh + ds;   // fc_sn1, fc_sn2
    if (cfg.specnorm_mode == SpecMode::BatchNormLike) per_block += 2 * dh + 2 * ds;
  }
  return c * pix + c                            // stem
         + static_cast<std::size_t>(cfg.depth) * per_block
         + 2 * c                                // final ln
         + k * c + k;                           // head
}

}  // namespace hopmix
