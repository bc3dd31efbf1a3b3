#include "ha2f/backbone.hpp"

#include <cmath>
#include <string>

#include "ha2f/errors.hpp"
#include "ha2f/ops.hpp"

namespace ha2f {

void BackboneConfig::validate() const {
  if (input_size <= 0 || input_size % 16 != 0)
    throw ConfigError("input_size must be a positive multiple of 16, got " +
                      std::to_string(input_size));
  if (patch_size <= 0 || input_size % patch_size != 0)
    throw ConfigError("patch_size must divide input_size");
  if (input_size / patch_size != input_size / 16)
    throw ConfigError("token grid must coincide with the 1/16 feature grid for fusion; "
                      "use patch_size 16");
  if (vit_dim <= 0 || vit_heads <= 0 || vit_dim % vit_heads != 0)
    throw ConfigError("vit_dim must be a positive multiple of vit_heads");
  if (vit_depth <= 0) throw ConfigError("vit_depth must be positive");
  for (int c : cnn_channels)
    if (c <= 0) throw ConfigError("cnn_channels entries must be positive");
  if (fused_channels <= 0) throw ConfigError("fused_channels must be positive");
}

VitBlockParams::VitBlockParams(nn::ParamStore& ps, const std::string& name, int dim, int heads_)
    : ln1(ps, name + ".ln1", dim),
      ln2(ps, name + ".ln2", dim),
      wq(ps, name + ".wq", dim, dim),
      wk(ps, name + ".wk", dim, dim),
      wv(ps, name + ".wv", dim, dim),
      wo(ps, name + ".wo", dim, dim),
      ffn1(ps, name + ".ffn1", dim, 4 * dim),
      ffn2(ps, name + ".ffn2", 4 * dim, dim),
      heads(heads_) {}

CnnStageParams::CnnStageParams(nn::ParamStore& ps, const std::string& name, int cin, int cout)
    : conv1(ps, name + ".conv1", cin, cout, 3, 2, 1, 1, /*has_bias=*/false),
      conv2(ps, name + ".conv2", cout, cout, 3, 1, 1, 1, false),
      proj(ps, name + ".proj", cin, cout, 1, 2, 0, 1, false),
      bn1(ps, name + ".bn1", cout),
      bn2(ps, name + ".bn2", cout),
      bn_proj(ps, name + ".bn_proj", cout) {}

BackboneParams::BackboneParams(nn::ParamStore& ps, const BackboneConfig& cfg_) : cfg(cfg_) {
  cfg.validate();
  const int pd = 3 * cfg.patch_size * cfg.patch_size;
  const int tokens = cfg.token_grid() * cfg.token_grid();
  patch_embed = nn::Linear(ps, "backbone.patch_embed", pd, cfg.vit_dim);
  // small-amplitude learned position embedding
  pos_emb = ps.gaussian("backbone.pos_emb", {1, tokens, cfg.vit_dim}, 0.02);
  blocks.reserve(cfg.vit_depth);
  for (int i = 0; i < cfg.vit_depth; ++i)
    blocks.emplace_back(ps, "backbone.block" + std::to_string(i), cfg.vit_dim, cfg.vit_heads);
  int cin = 3;
  for (int i = 0; i < 4; ++i) {
    stages[i] = CnnStageParams(ps, "backbone.stage" + std::to_string(i), cin, cfg.cnn_channels[i]);
    cin = cfg.cnn_channels[i];
  }
  fuse = nn::Conv2d(ps, "backbone.fuse", cfg.vit_dim + cfg.cnn_channels[3], cfg.fused_channels, 1,
                    1, 0);
}

Tensor vit_block(const Tensor& tokens, const VitBlockParams& p) {
  const int d = tokens.dim(2);
  if (d != p.wq.w.dim(0))
    throw ConfigError("vit_block: token dim " + std::to_string(d) + " does not match params (" +
                      std::to_string(p.wq.w.dim(0)) + ")");
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(d / p.heads));

  Tensor h = p.ln1.forward(tokens);
  Tensor q = ops::split_heads(p.wq.forward(h), p.heads);
  Tensor k = ops::split_heads(p.wk.forward(h), p.heads);
  Tensor v = ops::split_heads(p.wv.forward(h), p.heads);
  Tensor attn = ops::softmax_lastdim(ops::scale(ops::bmm(q, k, /*transpose_b=*/true), inv_sqrt_dh));
  Tensor ctx = ops::merge_heads(ops::bmm(attn, v), p.heads);
  Tensor x = ops::add(tokens, p.wo.forward(ctx));

  Tensor f = p.ln2.forward(x);
  Tensor ffn = p.ffn2.forward(ops::gelu(p.ffn1.forward(f)));
  return ops::add(x, ffn);
}

namespace {

Tensor cnn_stage(const Tensor& x, const CnnStageParams& s, bool training) {
  Tensor y = ops::relu(s.bn1.forward(s.conv1.forward(x), training));
  y = s.bn2.forward(s.conv2.forward(y), training);
  Tensor shortcut = s.bn_proj.forward(s.proj.forward(x), training);
  return ops::relu(ops::add(y, shortcut));
}

}  // namespace

std::map<int, FeatureMap> extract_cnn_pyramid(const Tensor& image, const BackboneParams& p,
                                              Phase phase, bool training) {
  if (image.rank() != 4 || image.dim(1) != 3)
    throw ShapeError("extract_cnn_pyramid: expected (N,3,H,W) image");
  if (image.dim(2) != p.cfg.input_size || image.dim(3) != p.cfg.input_size)
    throw ShapeError("extract_cnn_pyramid: image is " + std::to_string(image.dim(2)) + "x" +
                     std::to_string(image.dim(3)) + ", config wants " +
                     std::to_string(p.cfg.input_size));
  if (image.dim(2) % 16 != 0)
    throw ShapeError("extract_cnn_pyramid: height " + std::to_string(image.dim(2)) +
                     " not divisible by 16");
  std::map<int, FeatureMap> out;
  Tensor x = image;
  const int scales[4] = {2, 4, 8, 16};
  for (int i = 0; i < 4; ++i) {
    x = cnn_stage(x, p.stages[i], training);
    out[scales[i]] = FeatureMap{x, scales[i], phase};
  }
  return out;
}

FeaturePyramid extract_pyramid(const Tensor& image, const BackboneParams& p, Phase phase,
                               bool training) {
  FeaturePyramid pyr;
  pyr.phase = phase;
  pyr.levels = extract_cnn_pyramid(image, p, phase, training);

  Tensor tokens = ops::add_broadcast0(p.patch_embed.forward(ops::patchify(image, p.cfg.patch_size)),
                                      p.pos_emb);
  for (const VitBlockParams& blk : p.blocks) tokens = vit_block(tokens, blk);
  const int g = p.cfg.token_grid();
  Tensor vit_grid = ops::nchw_from_tokens(tokens, g, g);

  Tensor fused = p.fuse.forward(ops::concat_channels({vit_grid, pyr.levels[16].data}));
  pyr.fused_high = FeatureMap{fused, 16, phase};
  return pyr;
}

}  // namespace ha2f
