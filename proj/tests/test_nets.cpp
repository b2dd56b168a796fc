#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "tsbn/nets.hpp"
#include "tsbn/rng.hpp"

using tsbn::ArchConfig;
using tsbn::Graph;
using tsbn::GrayImage;
using tsbn::ModelBundle;
using tsbn::Rng;
using tsbn::Tensor;
using tsbn::Var;

namespace {

ArchConfig small_cfg(const std::string& variant, int h = 32, int w = 16) {
  ArchConfig cfg;
  cfg.variant = variant;
  cfg.in_h = h;
  cfg.in_w = w;
  return cfg;
}

Tensor random_batch(long n, long h, long w, Rng& rng, double lo = 0.0,
                    double hi = 1.0) {
  Tensor t({n, 1, h, w});
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("restoration output keeps the input shape for both variants") {
  Rng rng(1);
  for (const char* variant : {"unet_small", "rdn_small"}) {
    for (auto [h, w] : {std::pair{96, 48}, {32, 16}, {48, 24}}) {
      ModelBundle bundle = tsbn::build_models(small_cfg(variant, h, w), 5);
      Tensor x = random_batch(2, h, w, rng);
      auto [restored, tap] = tsbn::pretext_forward(*bundle.restoration, x);
      REQUIRE(restored.shape == x.shape);
      REQUIRE(tap.dim(1) == bundle.restoration->encoder_channels());
    }
  }
}

TEST_CASE("documented encoder channel counts") {
  ModelBundle unet = tsbn::build_models(small_cfg("unet_small"), 2);
  REQUIRE(unet.restoration->encoder_channels() == 64);  // base 8 << 3
  ModelBundle rdn = tsbn::build_models(small_cfg("rdn_small"), 2);
  REQUIRE(rdn.restoration->encoder_channels() == 16);  // G0

  // tap spatial extent: unet taps at 1/8 scale, rdn at full resolution
  Rng rng(3);
  Tensor x = random_batch(1, 32, 16, rng);
  auto [ru, tu] = tsbn::pretext_forward(*unet.restoration, x);
  REQUIRE(tu.shape == std::vector<long>{1, 64, 4, 2});
  auto [rr, tr] = tsbn::pretext_forward(*rdn.restoration, x);
  REQUIRE(tr.shape == std::vector<long>{1, 16, 32, 16});
}

TEST_CASE("default parameter counts are frozen regression values") {
  ModelBundle unet = tsbn::build_models(small_cfg("unet_small", 96, 48), 7);
  REQUIRE(tsbn::parameter_count(unet.restoration_params()) == 134121);
  REQUIRE(tsbn::parameter_count(unet.classifier.parameters()) == 75745);
  REQUIRE(tsbn::parameter_count(unet.parameters()) == 218186);
  REQUIRE(tsbn::parameter_count(unet.parameters()) < 500000);

  ModelBundle rdn = tsbn::build_models(small_cfg("rdn_small", 96, 48), 7);
  REQUIRE(tsbn::parameter_count(rdn.restoration_params()) == 32369);
  REQUIRE(tsbn::parameter_count(rdn.parameters()) == 113362);
  REQUIRE(tsbn::parameter_count(rdn.parameters()) < 500000);
}

TEST_CASE("forward passes are deterministic in inference mode") {
  ModelBundle bundle = tsbn::build_models(small_cfg("unet_small"), 11);
  Rng rng(4);
  Tensor x = random_batch(4, 32, 16, rng);
  auto [r1, t1] = tsbn::pretext_forward(*bundle.restoration, x);
  auto [r2, t2] = tsbn::pretext_forward(*bundle.restoration, x);
  REQUIRE(r1.data == r2.data);
  REQUIRE(t1.data == t2.data);
  auto [l1, p1] = tsbn::classifier_forward(bundle.classifier, x);
  auto [l2, p2] = tsbn::classifier_forward(bundle.classifier, x);
  REQUIRE(l1.data == l2.data);
  REQUIRE(p1.data == p2.data);
}

TEST_CASE("fresh models stay finite on inputs covering gsim range") {
  Rng rng(6);
  for (const char* variant : {"unet_small", "rdn_small"}) {
    ModelBundle bundle = tsbn::build_models(small_cfg(variant), 13);
    Tensor zero({2, 1, 32, 16});
    Tensor wide = random_batch(2, 32, 16, rng, -1.0, 2.0);
    for (const Tensor& x : {zero, wide}) {
      auto [restored, tap] = tsbn::pretext_forward(*bundle.restoration, x);
      REQUIRE(restored.all_finite());
      REQUIRE(tap.all_finite());
      auto [logits, pooled] = tsbn::classifier_forward(bundle.classifier, x);
      REQUIRE(logits.all_finite());
      REQUIRE(pooled.all_finite());
    }
  }
}

TEST_CASE("classifier forward shapes and probability range") {
  ModelBundle bundle = tsbn::build_models(small_cfg("unet_small"), 17);
  Rng rng(8);
  Tensor x = random_batch(4, 32, 16, rng);
  auto [logits, pooled] = tsbn::classifier_forward(bundle.classifier, x);
  REQUIRE(logits.shape == std::vector<long>{4, 1});
  REQUIRE(pooled.shape ==
          std::vector<long>{4, bundle.classifier.feature_channels()});
  for (long i = 0; i < 4; ++i) {
    double p = 1.0 / (1.0 + std::exp(-logits[i]));
    REQUIRE(p > 0.0);
    REQUIRE(p < 1.0);
  }
}

TEST_CASE("pooled features equal the manual spatial mean") {
  ModelBundle bundle = tsbn::build_models(small_cfg("unet_small"), 19);
  Tensor x({1, 1, 32, 16}, 0.6);  // spatially constant input
  Graph g;
  Var feat = bundle.classifier.backbone(g, g.input(x));
  tsbn::ClassifierOut out = bundle.classifier.head_from_features(g, feat);
  const Tensor& fmap = g.value(feat);
  const Tensor& pooled = g.value(out.pooled);
  const long C = fmap.dim(1), hw = fmap.dim(2) * fmap.dim(3);
  for (long c = 0; c < C; ++c) {
    double acc = 0.0;
    for (long i = 0; i < hw; ++i) acc += fmap.ptr()[c * hw + i];
    REQUIRE(pooled[c] == acc / static_cast<double>(hw));
  }
}

TEST_CASE("transfer branches project to the shared embedding") {
  ModelBundle bundle = tsbn::build_models(small_cfg("unet_small"), 23);
  Rng rng(9);
  Tensor x = random_batch(3, 32, 16, rng);
  auto [restored, tap] = tsbn::pretext_forward(*bundle.restoration, x);
  auto [logits, pooled] = tsbn::classifier_forward(bundle.classifier, x);
  Tensor p_emb = tsbn::project(bundle.branch_p, tap);
  Tensor d_emb = tsbn::project(bundle.branch_d, pooled);
  REQUIRE(p_emb.shape == std::vector<long>{3, 64});
  REQUIRE(d_emb.shape == std::vector<long>{3, 64});  // Eq-compatible by construction
}

TEST_CASE("zero feature map through a zero-initialized branch is zero") {
  ModelBundle bundle = tsbn::build_models(small_cfg("unet_small"), 29);
  bundle.branch_p.proj.w.value.fill(0.0);
  bundle.branch_p.proj.b.value.fill(0.0);
  Tensor zero_map({2, 64, 4, 2});
  Tensor emb = tsbn::project(bundle.branch_p, zero_map);
  for (long i = 0; i < emb.numel(); ++i) REQUIRE(emb[i] == 0.0);
}

TEST_CASE("branch P on a channel-constant map equals the affine of the constants") {
  ModelBundle bundle = tsbn::build_models(small_cfg("unet_small"), 31);
  Rng rng(10);
  std::vector<double> channel_vals(64);
  Tensor fmap({1, 64, 4, 2});
  for (long c = 0; c < 64; ++c) {
    channel_vals[static_cast<std::size_t>(c)] = rng.uniform(-1.0, 1.0);
    for (long i = 0; i < 8; ++i)
      fmap.ptr()[c * 8 + i] = channel_vals[static_cast<std::size_t>(c)];
  }
  Tensor emb = tsbn::project(bundle.branch_p, fmap);
  const Tensor& w = bundle.branch_p.proj.w.value;
  const Tensor& b = bundle.branch_p.proj.b.value;
  for (long k = 0; k < 64; ++k) {
    double acc = b[k];
    for (long c = 0; c < 64; ++c)
      acc += w[k * 64 + c] * channel_vals[static_cast<std::size_t>(c)];
    REQUIRE_THAT(emb[k], Catch::Matchers::WithinAbs(acc, 1e-12));
  }
}

TEST_CASE("branch dimension mismatches are rejected") {
  ModelBundle bundle = tsbn::build_models(small_cfg("unet_small"), 37);
  Tensor wrong_channels({1, 32, 4, 2}, 0.1);
  REQUIRE_THROWS_AS(tsbn::project(bundle.branch_p, wrong_channels),
                    tsbn::InvalidInput);
  Tensor wrong_rank({1, 64}, 0.1);
  REQUIRE_THROWS_AS(tsbn::project(bundle.branch_p, wrong_rank),
                    tsbn::InvalidInput);
  Tensor wrong_dim({1, 32}, 0.1);
  REQUIRE_THROWS_AS(tsbn::project(bundle.branch_d, wrong_dim),
                    tsbn::InvalidInput);
}

TEST_CASE("inconsistent arch configs raise ConfigError") {
  ArchConfig cfg = small_cfg("unet_small");
  cfg.in_h = 30;  // not a multiple of 8
  REQUIRE_THROWS_AS(tsbn::build_models(cfg, 1), tsbn::ConfigError);
  cfg = small_cfg("nope");
  REQUIRE_THROWS_AS(tsbn::build_models(cfg, 1), tsbn::ConfigError);
  cfg = small_cfg("rdn_small");
  cfg.embed_dim = 0;
  REQUIRE_THROWS_AS(tsbn::build_models(cfg, 1), tsbn::ConfigError);
}

TEST_CASE("batch helpers validate shapes") {
  GrayImage a(8, 8, 0.1), b(8, 6, 0.1);
  REQUIRE_THROWS_AS(tsbn::batch_to_tensor({&a, &b}), tsbn::InvalidInput);
  REQUIRE_THROWS_AS(tsbn::batch_to_tensor({}), tsbn::InvalidInput);
}

TEST_CASE("builds are deterministic per seed") {
  ModelBundle a = tsbn::build_models(small_cfg("rdn_small"), 99);
  ModelBundle b = tsbn::build_models(small_cfg("rdn_small"), 99);
  REQUIRE(tsbn::param_checksum(a.parameters()) ==
          tsbn::param_checksum(b.parameters()));
  ModelBundle c = tsbn::build_models(small_cfg("rdn_small"), 100);
  REQUIRE(tsbn::param_checksum(a.parameters()) !=
          tsbn::param_checksum(c.parameters()));
}
