#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "hopmix/imlp.hpp"
#include "hopmix/nn.hpp"

namespace hopmix {

enum class TokenMixerKind { IMlp, Vanilla };

struct MixerConfig {
  int image_size = 16;
  int patch_size = 4;
  int channels_in = 1;
  int hidden_dim = 64;     // C
  int depth = 4;
  int token_mlp_dim = 32;  // D_S
  int channel_mlp_dim = 256;
  TokenMixerKind token_mixer = TokenMixerKind::IMlp;
  double h_r = 2.0;
  int n_iter = 2;
  double specnorm_coeff = 0.9;
  int specnorm_n_power = 8;
  SpecMode specnorm_mode = SpecMode::Spec;
  int num_classes = 10;
  double dropout = 0.0;
  std::uint64_t seed = 42;

  int tokens() const { return (image_size / patch_size) * (image_size / patch_size); }
  int patch_pixels() const { return channels_in * patch_size * patch_size; }
  int hidden_mixer_dim() const {
    return static_cast<int>(std::llround(h_r * static_cast<double>(token_mlp_dim)));
  }
  void validate() const;
};

// Desk-scale presets (not a published scale).
MixerConfig micro_preset();
MixerConfig tiny_preset();

// Channel-mixing MLP with its leading LayerNorm; residual added by the block.
struct ChannelMlp {
  LayerNorm ln;  // over C
  Linear fc1;    // C -> D_C
  Linear fc2;    // D_C -> C
  double drop_p = 0.0;

  ChannelMlp() = default;
  ChannelMlp(const std::string& prefix, std::size_t c, std::size_t d_c, std::uint64_t seed,
             double drop);
  Tensor forward(Fwd& f, const Tensor& x);
  void collect(std::vector<Parameter*>& out) {
    ln.collect(out);
    fc1.collect(out);
    fc2.collect(out);
  }
};

// Vanilla token-mixing MLP, including its LayerNorm over the token axis and
// the residual connection; mirrors the iMLP composition with F removed.
struct VanillaTokenMlp {
  LayerNorm ln;  // over S
  Linear fc1;    // S -> D_S
  Linear fc2;    // D_S -> S
  double drop_p = 0.0;

  VanillaTokenMlp() = default;
  VanillaTokenMlp(const std::string& prefix, std::size_t d_vis, std::size_t d_mid,
                  std::uint64_t seed, double drop);
  Tensor forward(Fwd& f, const Tensor& v);
  void collect(std::vector<Parameter*>& out) {
    ln.collect(out);
    fc1.collect(out);
    fc2.collect(out);
  }
};

struct MixerBlock {
  TokenMixerKind kind = TokenMixerKind::IMlp;
  IMlpModule imlp;
  VanillaTokenMlp vanilla;
  ChannelMlp channel;

  // tokens [S x C] -> [S x C]; token mixing happens on the transposed view.
  Tensor forward(Fwd& f, const Tensor& tokens, FpaTrace* trace = nullptr, int n_override = -1);
  void collect(std::vector<Parameter*>& out);
};

// Splits an image into non-overlapping patches, flattened row-major with the
// channel index outermost. Returns [S x patch_pixels].
Tensor extract_patches(const MixerConfig& cfg, std::span<const double> image);

class MixerModel {
 public:
  explicit MixerModel(const MixerConfig& cfg);

  const MixerConfig& config() const { return cfg_; }

  // Normalized image pixels [C_in*H*W] -> logits [K].
  Tensor forward(Fwd& f, std::span<const double> image, std::vector<FpaTrace>* traces = nullptr,
                 int probe_n = -1);

  // Stem output for one image: [S x C].
  Tensor patch_embed(Fwd& f, std::span<const double> image);

  std::span<Parameter* const> parameters() { return params_; }
  Parameter* find(const std::string& name);

  // Persistent non-trainable state (power-iteration vectors), name -> tensor.
  std::vector<std::pair<std::string, Tensor*>> named_buffers();

  std::vector<MixerBlock>& blocks() { return blocks_; }
  Linear& stem() { return stem_; }
  LayerNorm& final_norm() { return norm_; }
  Linear& head() { return head_; }

  void zero_grads();
  void set_freeze_norm(bool frozen);
  void converge_norms(int passes = 50);

 private:
  MixerConfig cfg_;
  Linear stem_;
  std::vector<MixerBlock> blocks_;
  LayerNorm norm_;
  Linear head_;
  std::vector<Parameter*> params_;
};

// Closed-form parameter count for a config; asserted against the registry.
std::size_t count_params(const MixerConfig& cfg);

}  // namespace hopmix
