#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <set>

#include "doctest.h"
#include "hopmix/mixer.hpp"
#include "oracles.hpp"

using namespace hopmix;

namespace {

MixerConfig micro_micro(TokenMixerKind kind) {
  MixerConfig cfg;
  cfg.image_size = 8;
  cfg.patch_size = 4;
  cfg.channels_in = 1;
  cfg.hidden_dim = 8;
  cfg.depth = 1;
  cfg.token_mlp_dim = 4;
  cfg.channel_mlp_dim = 16;
  cfg.token_mixer = kind;
  cfg.h_r = 2.0;
  cfg.n_iter = 2;
  cfg.num_classes = 3;
  cfg.seed = 7;
  return cfg;
}

void zero_all_linear(MixerModel& model) {
  for (Parameter* p : model.parameters()) {
    const bool is_norm = p->name.ends_with(".gamma") || p->name.ends_with(".beta");
    if (!is_norm) std::fill(p->value.data().begin(), p->value.data().end(), 0.0);
  }
}

}  // namespace

TEST_CASE("patch extraction: identity projection recovers raw patches") {
  MixerConfig cfg;
  cfg.image_size = 4;
  cfg.patch_size = 2;
  cfg.channels_in = 1;
  cfg.hidden_dim = 4;  // equals patch_pixels so the stem can be the identity
  cfg.depth = 0;
  cfg.token_mlp_dim = 2;
  cfg.channel_mlp_dim = 4;
  cfg.num_classes = 2;
  MixerModel model(cfg);
  // identity stem
  Parameter* w = model.find("stem.weight");
  REQUIRE(w != nullptr);
  std::fill(w->value.data().begin(), w->value.data().end(), 0.0);
  for (std::size_t i = 0; i < 4; ++i) w->value.at(i, i) = 1.0;
  std::fill(model.find("stem.bias")->value.data().begin(),
            model.find("stem.bias")->value.data().end(), 0.0);

  std::vector<double> image(16);
  for (std::size_t i = 0; i < 16; ++i) image[i] = static_cast<double>(i);
  Fwd f;
  Tensor tokens = model.patch_embed(f, image);
  // token 0 is the top-left patch in row-major order
  CHECK(tokens.at(0, 0) == 0.0);
  CHECK(tokens.at(0, 1) == 1.0);
  CHECK(tokens.at(0, 2) == 4.0);
  CHECK(tokens.at(0, 3) == 5.0);
  // token 3 is the bottom-right patch
  CHECK(tokens.at(3, 0) == 10.0);
  CHECK(tokens.at(3, 1) == 11.0);
  CHECK(tokens.at(3, 2) == 14.0);
  CHECK(tokens.at(3, 3) == 15.0);
}

TEST_CASE("patch extraction matches index arithmetic on multi-channel input") {
  MixerConfig cfg;
  cfg.image_size = 6;
  cfg.patch_size = 3;
  cfg.channels_in = 2;
  cfg.hidden_dim = 8;
  cfg.depth = 0;
  cfg.num_classes = 2;
  RandomStream rs(5);
  std::vector<double> image(2 * 6 * 6);
  for (double& v : image) v = rs.gaussian();
  Tensor patches = extract_patches(cfg, image);
  REQUIRE(patches.rows() == 4);
  REQUIRE(patches.cols() == 18);
  for (std::size_t token = 0; token < 4; ++token) {
    const std::size_t gy = token / 2, gx = token % 2;
    std::size_t k = 0;
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t py = 0; py < 3; ++py)
        for (std::size_t px = 0; px < 3; ++px) {
          const std::size_t src = (c * 6 + gy * 3 + py) * 6 + (gx * 3 + px);
          CHECK(patches.at(token, k++) == image[src]);
        }
  }
}

TEST_CASE("constant image produces identical token embeddings") {
  MixerConfig cfg = micro_micro(TokenMixerKind::Vanilla);
  MixerModel model(cfg);
  std::vector<double> image(64, 0.37);
  Fwd f;
  Tensor tokens = model.patch_embed(f, image);
  for (std::size_t t = 1; t < tokens.rows(); ++t)
    for (std::size_t c = 0; c < tokens.cols(); ++c) CHECK(tokens.at(t, c) == tokens.at(0, c));
}

TEST_CASE("block with zeroed linear weights is the identity") {
  for (TokenMixerKind kind : {TokenMixerKind::IMlp, TokenMixerKind::Vanilla}) {
    MixerConfig cfg = micro_micro(kind);
    MixerModel model(cfg);
    zero_all_linear(model);
    RandomStream rs(6);
    Tensor tokens = oracles::random_tensor({4, 8}, rs);
    Fwd f;
    Tensor out = model.blocks()[0].forward(f, tokens);
    for (std::size_t i = 0; i < tokens.numel(); ++i) CHECK(out.data()[i] == tokens.data()[i]);
  }
}

TEST_CASE("channel half is token-permutation equivariant") {
  MixerConfig cfg = micro_micro(TokenMixerKind::Vanilla);
  MixerModel model(cfg);
  // disable the token mixer so the block is channel-only
  for (const char* name : {"blocks.0.token_mix.fc1.weight", "blocks.0.token_mix.fc1.bias",
                           "blocks.0.token_mix.fc2.weight", "blocks.0.token_mix.fc2.bias"}) {
    Parameter* p = model.find(name);
    REQUIRE(p != nullptr);
    std::fill(p->value.data().begin(), p->value.data().end(), 0.0);
  }
  RandomStream rs(7);
  Tensor tokens = oracles::random_tensor({4, 8}, rs);
  Fwd f;
  Tensor out = model.blocks()[0].forward(f, tokens);
  std::vector<std::size_t> perm = {2, 0, 3, 1};
  Tensor permuted({4, 8});
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t c = 0; c < 8; ++c) permuted.at(t, c) = tokens.at(perm[t], c);
  Tensor out_p = model.blocks()[0].forward(f, permuted);
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t c = 0; c < 8; ++c) CHECK(out_p.at(t, c) == out.at(perm[t], c));
}

TEST_CASE("zero model maps everything to zero logits and ln K loss") {
  MixerConfig cfg = micro_micro(TokenMixerKind::IMlp);
  MixerModel model(cfg);
  zero_all_linear(model);
  RandomStream rs(8);
  std::vector<double> image(64);
  for (double& v : image) v = rs.gaussian();
  Fwd f;
  Tensor logits = model.forward(f, image);
  for (double v : logits.data()) CHECK(v == 0.0);
  Tensor row = stack_rows(std::vector<Tensor>{logits});
  CHECK(cross_entropy(row, {1}).item() == doctest::Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("identical inputs give identical logits; frozen forward is pure") {
  MixerConfig cfg = micro_micro(TokenMixerKind::IMlp);
  MixerModel model(cfg);
  RandomStream rs(9);
  std::vector<double> image(64);
  for (double& v : image) v = rs.gaussian();
  Fwd f;
  Tensor a = model.forward(f, image);
  Tensor b = model.forward(f, image);
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a.data()[i] == b.data()[i]);
}

TEST_CASE("single-image forward matches a scalar-loop reference model") {
  MixerConfig cfg = micro_micro(TokenMixerKind::IMlp);
  MixerModel model(cfg);
  model.converge_norms(60);
  model.set_freeze_norm(true);

  RandomStream rs(10);
  std::vector<double> image(64);
  for (double& v : image) v = rs.gaussian();
  Fwd f;
  Tensor got = model.forward(f, image);

  // --- scalar reference ---
  const std::size_t S = 4, C = 8, P = 16, K = 3;
  auto pget = [&](const char* name) {
    Parameter* p = model.find(name);
    REQUIRE(p != nullptr);
    return p;
  };
  // patches
  std::vector<std::vector<double>> patches(S, std::vector<double>(P));
  for (std::size_t gy = 0; gy < 2; ++gy)
    for (std::size_t gx = 0; gx < 2; ++gx)
      for (std::size_t py = 0; py < 4; ++py)
        for (std::size_t px = 0; px < 4; ++px)
          patches[gy * 2 + gx][py * 4 + px] = image[(gy * 4 + py) * 8 + (gx * 4 + px)];
  // stem
  Parameter* sw = pget("stem.weight");
  Parameter* sb = pget("stem.bias");
  std::vector<std::vector<double>> tok(S, std::vector<double>(C));
  for (std::size_t t = 0; t < S; ++t)
    for (std::size_t c = 0; c < C; ++c) {
      double s = sb->value.at(c);
      for (std::size_t k = 0; k < P; ++k) s += sw->value.at(c, k) * patches[t][k];
      tok[t][c] = s;
    }
  // token mixer on the transposed view, one channel row at a time
  oracles::ScalarIMlpWeights w;
  auto mat = [&](const char* name) {
    Parameter* p = pget(name);
    std::vector<std::vector<double>> out(p->value.rows(), std::vector<double>(p->value.cols()));
    for (std::size_t r = 0; r < p->value.rows(); ++r)
      for (std::size_t c = 0; c < p->value.cols(); ++c) out[r][c] = p->value.at(r, c);
    return out;
  };
  w.ln_gamma = pget("blocks.0.token_mix.ln.gamma")->value.data();
  w.ln_beta = pget("blocks.0.token_mix.ln.beta")->value.data();
  w.w1 = mat("blocks.0.token_mix.fc1.weight");
  w.b1 = pget("blocks.0.token_mix.fc1.bias")->value.data();
  w.wsn1 = mat("blocks.0.token_mix.fc_sn1.weight");
  w.bsn1 = pget("blocks.0.token_mix.fc_sn1.bias")->value.data();
  w.wsn2 = mat("blocks.0.token_mix.fc_sn2.weight");
  w.bsn2 = pget("blocks.0.token_mix.fc_sn2.bias")->value.data();
  w.w2 = mat("blocks.0.token_mix.fc2.weight");
  w.b2 = pget("blocks.0.token_mix.fc2.bias")->value.data();
  w.sn1_scale = model.blocks()[0].imlp.fc_sn1.current_scale();
  w.sn2_scale = model.blocks()[0].imlp.fc_sn2.current_scale();
  w.n_iter = 2;
  std::vector<std::vector<double>> mixed(S, std::vector<double>(C));
  for (std::size_t c = 0; c < C; ++c) {
    std::vector<double> rowv(S);
    for (std::size_t t = 0; t < S; ++t) rowv[t] = tok[t][c];
    const std::vector<double> out = oracles::scalar_imlp_forward(w, rowv);
    for (std::size_t t = 0; t < S; ++t) mixed[t][c] = out[t];
  }
  // channel mlp per token
  auto ln_vec = [&](const std::vector<double>& x, const std::vector<double>& gamma,
                    const std::vector<double>& beta) {
    const std::size_t n = x.size();
    double mean = 0.0;
    for (double q : x) mean += q;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double q : x) var += (q - mean) * (q - mean);
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + 1e-6);
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = gamma[i] * (x[i] - mean) * inv + beta[i];
    return out;
  };
  const auto cw1 = mat("blocks.0.channel_mlp.fc1.weight");
  const auto cw2 = mat("blocks.0.channel_mlp.fc2.weight");
  const auto& cb1 = pget("blocks.0.channel_mlp.fc1.bias")->value.data();
  const auto& cb2 = pget("blocks.0.channel_mlp.fc2.bias")->value.data();
  const auto& cg = pget("blocks.0.channel_mlp.ln.gamma")->value.data();
  const auto& cb = pget("blocks.0.channel_mlp.ln.beta")->value.data();
  std::vector<std::vector<double>> after(S, std::vector<double>(C));
  for (std::size_t t = 0; t < S; ++t) {
    const std::vector<double> ln = ln_vec(mixed[t], cg, cb);
    std::vector<double> h(16);
    for (std::size_t o = 0; o < 16; ++o) {
      double s = cb1[o];
      for (std::size_t i = 0; i < C; ++i) s += cw1[o][i] * ln[i];
      h[o] = oracles::ref_gelu(s);
    }
    for (std::size_t o = 0; o < C; ++o) {
      double s = cb2[o];
      for (std::size_t i = 0; i < 16; ++i) s += cw2[o][i] * h[i];
      after[t][o] = mixed[t][o] + s;
    }
  }
  // final norm, pool, head
  const auto& fg = pget("norm.gamma")->value.data();
  const auto& fb = pget("norm.beta")->value.data();
  std::vector<double> pooled(C, 0.0);
  for (std::size_t t = 0; t < S; ++t) {
    const std::vector<double> ln = ln_vec(after[t], fg, fb);
    for (std::size_t c = 0; c < C; ++c) pooled[c] += ln[c];
  }
  for (double& q : pooled) q /= static_cast<double>(S);
  const auto hw = mat("head.weight");
  const auto& hb = pget("head.bias")->value.data();
  for (std::size_t k = 0; k < K; ++k) {
    double s = hb[k];
    for (std::size_t c = 0; c < C; ++c) s += hw[k][c] * pooled[c];
    CHECK(std::abs(got.at(k) - s) <= 1e-10);
  }
}

TEST_CASE("closed-form parameter count equals the registry") {
  std::vector<MixerConfig> cfgs;
  cfgs.push_back(micro_micro(TokenMixerKind::Vanilla));
  cfgs.push_back(micro_micro(TokenMixerKind::IMlp));
  MixerConfig bn = micro_micro(TokenMixerKind::IMlp);
  bn.specnorm_mode = SpecMode::BatchNormLike;
  cfgs.push_back(bn);
  MixerConfig deep = micro_preset();
  cfgs.push_back(deep);
  MixerConfig zero_depth = micro_micro(TokenMixerKind::IMlp);
  zero_depth.depth = 0;
  cfgs.push_back(zero_depth);

  for (const MixerConfig& cfg : cfgs) {
    MixerModel model(cfg);
    std::size_t registry = 0;
    for (Parameter* p : model.parameters()) registry += p->value.numel();
    CHECK(count_params(cfg) == registry);
  }
}

TEST_CASE("iMLP variant adds exactly the two spectral layers per block") {
  MixerConfig vanilla = micro_preset();
  vanilla.token_mixer = TokenMixerKind::Vanilla;
  MixerConfig imlp = micro_preset();
  imlp.token_mixer = TokenMixerKind::IMlp;
  const std::size_t ds = imlp.token_mlp_dim, dh = imlp.hidden_mixer_dim();
  const std::size_t extra_per_block = ds * dh + dh + dh * ds + ds;
  CHECK(count_params(imlp) ==
        count_params(vanilla) + static_cast<std::size_t>(imlp.depth) * extra_per_block);
}

TEST_CASE("imlp and vanilla models share identical non-mixer initial values") {
  MixerConfig ci = micro_micro(TokenMixerKind::IMlp);
  MixerConfig cv = micro_micro(TokenMixerKind::Vanilla);
  MixerModel mi(ci), mv(cv);
  std::set<std::string> vanilla_names;
  for (Parameter* p : mv.parameters()) vanilla_names.insert(p->name);
  std::size_t shared = 0;
  for (Parameter* p : mi.parameters()) {
    if (!vanilla_names.count(p->name)) {
      CHECK(p->name.find("fc_sn") != std::string::npos);
      continue;
    }
    ++shared;
    Parameter* q = mv.find(p->name);
    REQUIRE(q != nullptr);
    for (std::size_t i = 0; i < p->value.numel(); ++i)
      CHECK(p->value.data()[i] == q->value.data()[i]);
  }
  CHECK(shared == mv.parameters().size());
}

TEST_CASE("gradient reaches every parameter") {
  MixerConfig cfg = micro_micro(TokenMixerKind::IMlp);
  MixerModel model(cfg);
  RandomStream rs(11);
  Tape tape;
  Fwd f{&tape, false, nullptr};
  std::vector<Tensor> rows;
  for (int b = 0; b < 2; ++b) {
    std::vector<double> image(64);
    for (double& v : image) v = rs.gaussian();
    rows.push_back(model.forward(f, image));
  }
  Tensor loss = cross_entropy(stack_rows(rows), {0, 2}, 0.1);
  tape.backward(loss);
  model.zero_grads();
  for (Parameter* p : model.parameters()) p->accumulate_from(tape);
  for (Parameter* p : model.parameters()) {
    double norm = 0.0;
    for (double g : p->grad.data()) norm += g * g;
    INFO(p->name);
    CHECK(norm > 0.0);
  }
}
