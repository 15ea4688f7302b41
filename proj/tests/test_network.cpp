#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "egcnn/checkpoint.hpp"
#include "egcnn/network.hpp"
#include "egcnn/pipeline.hpp"
#include "test_util.hpp"

using namespace egcnn;
using egcnn::testing::random_grid;

namespace {

SparseDepthSample random_sample(Rng& rng, std::size_t h, std::size_t w, double rate) {
  return sparsify(random_grid(rng, h, w, 1, 1, 10), rate, rng.next());
}

EdgeDistField random_field(Rng& rng, std::size_t h, std::size_t w) {
  EdgeMap e(h, w);
  for (auto& m : e.mask) m = rng.uniform() < 0.05;
  return build_edge_dist_field(e);
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("egcnn_net_" + name)).string();
}

SceneData small_scene(std::uint64_t seed, std::size_t size = 48) {
  SceneConfig sc;
  sc.height = sc.width = size;
  sc.rectangles = 3;
  sc.seed = seed;
  const Scene s = synth_scene(sc);
  return {s.depth, make_edge_field(s.color, EdgePreset::parse("canny-k3"))};
}

}  // namespace

TEST(NetworkSpec, UpsamplerPreset) {
  for (auto kind : {UpsamplerKind::edge, UpsamplerKind::normal, UpsamplerKind::sparse}) {
    const NetworkSpec s = NetworkSpec::upsampler(kind);
    ASSERT_EQ(s.layers.size(), 7u);
    for (std::size_t l = 0; l + 1 < s.layers.size(); ++l) {
      EXPECT_LE(s.layers[l + 1].kernel, s.layers[l].kernel);
      EXPECT_EQ(s.layers[l].out_channels, 2u);
      EXPECT_EQ(s.layers[l].kind, layer_kind_for(kind));
    }
    EXPECT_EQ(s.layers.front().kernel, 5u);
    EXPECT_EQ(s.layers[5].kernel, 3u);
    EXPECT_EQ(s.layers.back().kernel, 1u);
    EXPECT_EQ(s.layers.back().out_channels, 1u);
    // 25*1*2+2 + 2*(25*2*2+2) + 3*(9*2*2+2) + (2+1)
    EXPECT_EQ(s.parameter_count(), 52u + 2 * 102u + 3 * 38u + 3u);
    EXPECT_EQ(build_upsampler(kind).net.parameter_count(), 373u);
  }
}

TEST(NetworkSpec, FusionPreset) {
  const NetworkSpec s = NetworkSpec::fusion(2);
  ASSERT_EQ(s.layers.size(), 2u);
  EXPECT_EQ(s.layers[0].in_channels, 4u);
  EXPECT_EQ(s.layers[0].kernel, 3u);
  EXPECT_EQ(s.layers[1].kernel, 1u);
  EXPECT_EQ(s.layers[1].out_channels, 1u);
  EXPECT_THROW(NetworkSpec::fusion(1), std::invalid_argument);
  NetworkSpec bad = s;
  bad.layers[1].in_channels = 3;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Upsampler, EdgeWithUnitFieldEqualsNormal) {
  Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    const std::uint64_t seed = rng.next();
    auto edge = build_upsampler(UpsamplerKind::edge, seed);
    auto normal = build_upsampler(UpsamplerKind::normal, seed);
    ASSERT_EQ(edge.net.flat_parameters(), normal.net.flat_parameters());
    const auto s = random_sample(rng, 5 + rng.below(20), 5 + rng.below(20), 0.1);
    const auto unit = unit_edge_dist_field(s.sparse_depth.height(), s.sparse_depth.width());
    const auto a = upsample(edge, s, &unit), b = upsample(normal, s, nullptr);
    EXPECT_EQ(a.depth, b.depth);
    EXPECT_EQ(a.confidence, b.confidence);
  }
}

TEST(Upsampler, OutputShapeAndFiniteness) {
  Rng rng(4);
  for (auto kind : {UpsamplerKind::edge, UpsamplerKind::normal, UpsamplerKind::sparse}) {
    const auto m = build_upsampler(kind, 9);
    for (auto [h, w] : {std::pair<std::size_t, std::size_t>{1, 1}, {3, 17}, {20, 9}}) {
      const auto s = random_sample(rng, h, w, 1.0);
      const auto f = random_field(rng, h, w);
      const auto r = upsample(m, s, &f);
      EXPECT_EQ(r.depth.height(), h);
      EXPECT_EQ(r.depth.width(), w);
      EXPECT_EQ(r.depth.channels(), 1u);
      EXPECT_TRUE(r.depth.all_finite());
      EXPECT_TRUE(r.confidence.all_finite());
    }
  }
}

TEST(Upsampler, ZeroConfidenceGivesBiasResponse) {
  Rng rng(5);
  auto m = build_upsampler(UpsamplerKind::edge, 2);
  for (auto& p : m.net.params())
    for (auto& b : p.b) b = static_cast<float>(rng.uniform(-1, 1));
  SparseDepthSample s{GridF(6, 6, 1, 0.0f), GridF(6, 6, 1, 0.0f), GridF(6, 6, 1, 1.0f), 0.0};
  const auto f = random_field(rng, 6, 6);
  const auto r = upsample(m, s, &f);
  EXPECT_TRUE(r.depth.all_finite());
  EXPECT_TRUE(r.confidence.all_finite());
  // first layer sees no mass at all: its output is exactly the bias
  const auto first = m.net.run_layer(0, upsampler_input(UpsamplerKind::edge, s, &f));
  for (std::size_t p = 0; p < first.data.pixels(); ++p)
    for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(first.data[2 * p + c], m.net.params()[0].b[c]);
}

TEST(Upsampler, InputErrors) {
  Rng rng(6);
  const auto m = build_upsampler(UpsamplerKind::edge, 1);
  const auto s = random_sample(rng, 8, 8, 0.2);
  EXPECT_THROW(upsample(m, s, nullptr), std::invalid_argument);
  const auto f = random_field(rng, 8, 9);
  EXPECT_THROW(upsample(m, s, &f), std::invalid_argument);
  auto bad = s;
  bad.confidence = GridF(8, 7, 1);
  EXPECT_THROW(upsample(build_upsampler(UpsamplerKind::normal), bad, nullptr),
               std::invalid_argument);
  EXPECT_THROW(parse_upsampler_kind("bogus"), std::invalid_argument);
}

TEST(Network, BackwardMatchesFiniteDifferences) {
  for (auto kind : {LayerKind::egcl, LayerKind::nconv}) {
    Rng rng(kind == LayerKind::egcl ? 1 : 2);
    NetworkSpec spec = NetworkSpec::upsampler(kind == LayerKind::egcl ? UpsamplerKind::edge
                                                                      : UpsamplerKind::normal);
    Network<double> net(spec);
    net.initialize(17);
    for (auto& p : net.params())
      for (auto& b : p.b) b = rng.uniform(-0.5, 0.5);
    const LayerIO<double> in{random_grid<double>(rng, 5, 5, 1, 1, 5),
                             random_grid<double>(rng, 5, 5, 1, 0, 1),
                             random_grid<double>(rng, 5, 5, 1, 0.1, 1)};
    const GridD u = random_grid<double>(rng, 5, 5, 1, -1, 1);
    auto f = [&](std::span<const double> x) {
      Network<double> n = net;
      n.set_flat_parameters(x);
      const auto out = n.forward(in);
      double s = 0;
      for (std::size_t k = 0; k < u.size(); ++k) s += u[k] * out.data[k];
      return s;
    };
    Network<double>::Pass pass;
    net.forward_recorded(in, pass);
    net.backward(pass, u);
    std::vector<double> analytic;
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
      analytic.insert(analytic.end(), pass.grads.w[l].begin(), pass.grads.w[l].end());
      analytic.insert(analytic.end(), pass.grads.b[l].begin(), pass.grads.b[l].end());
    }
    const auto x = net.flat_parameters();
    EXPECT_LT(grad_check(f, std::span<const double>(x), std::span<const double>(analytic), 1e-3),
              1e-3);
  }
}

TEST(Network, FusionBackwardMatchesFiniteDifferences) {
  Rng rng(8);
  Network<double> net(NetworkSpec::fusion(2, 4));
  net.initialize(5);
  const LayerIO<double> in{random_grid<double>(rng, 5, 5, 4, 0, 3), {}, {}};
  const GridD u = random_grid<double>(rng, 5, 5, 1, -1, 1);
  auto f = [&](std::span<const double> x) {
    Network<double> n = net;
    n.set_flat_parameters(x);
    const auto out = n.forward(in);
    double s = 0;
    for (std::size_t k = 0; k < u.size(); ++k) s += u[k] * out.data[k];
    return s;
  };
  Network<double>::Pass pass;
  net.forward_recorded(in, pass);
  net.backward(pass, u);
  std::vector<double> analytic;
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    analytic.insert(analytic.end(), pass.grads.w[l].begin(), pass.grads.w[l].end());
    analytic.insert(analytic.end(), pass.grads.b[l].begin(), pass.grads.b[l].end());
  }
  const auto x = net.flat_parameters();
  EXPECT_LT(grad_check(f, std::span<const double>(x), std::span<const double>(analytic), 1e-3),
            1e-3);
}

TEST(Fusion, InputLayoutAndErrors) {
  Rng rng(9);
  const UpsampleResult a{random_grid(rng, 6, 7, 1, 1, 5), random_grid(rng, 6, 7, 1, 0.1, 1)};
  const UpsampleResult b{random_grid(rng, 6, 7, 1, 1, 5), random_grid(rng, 6, 7, 1, 0.1, 1)};
  const UpsampleResult both[] = {a, b};
  const GridF in = fusion_input(both);
  EXPECT_EQ(in.channels(), 4u);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 7; ++j) {
      const double total = a.confidence(i, j) + b.confidence(i, j);
      EXPECT_FLOAT_EQ(in(i, j, 0), a.depth(i, j) * a.confidence(i, j) / total);
      EXPECT_FLOAT_EQ(in(i, j, 1), b.depth(i, j) * b.confidence(i, j) / total);
      EXPECT_EQ(in(i, j, 2), a.confidence(i, j));
      EXPECT_EQ(in(i, j, 3), b.confidence(i, j));
    }
  const UpsampleResult one[] = {a};
  EXPECT_THROW(fusion_input(one), std::invalid_argument);
  const UpsampleResult misaligned[] = {a, {GridF(6, 6, 1, 1.0f), GridF(6, 6, 1, 1.0f)}};
  EXPECT_THROW(fusion_input(misaligned), std::invalid_argument);
  const UpsampleResult three[] = {a, b, a};
  EXPECT_THROW(fuse(build_fusion(2), three), std::invalid_argument);
}

TEST(Fusion, ZeroHeadGivesZeroOutput) {
  Rng rng(10);
  auto m = build_fusion(2, 3);
  auto& head = m.net.params()[1];
  std::fill(head.w.weights().begin(), head.w.weights().end(), 0.0f);
  std::fill(head.b.begin(), head.b.end(), 0.0f);
  const UpsampleResult br[] = {{random_grid(rng, 5, 5, 1, 1, 5), random_grid(rng, 5, 5, 1, 0, 1)},
                               {random_grid(rng, 5, 5, 1, 1, 5), random_grid(rng, 5, 5, 1, 0, 1)}};
  const GridF out = fuse(m, br);
  for (float v : out.values()) EXPECT_EQ(v, 0.0f);
}

TEST(Fusion, PassthroughInitIsConfidenceWeightedAverage) {
  Rng rng(11);
  auto m = build_fusion(2, 1);
  init_fusion_passthrough(m);
  const UpsampleResult br[] = {{random_grid(rng, 5, 5, 1, 1, 5), random_grid(rng, 5, 5, 1, 0.1, 1)},
                               {random_grid(rng, 5, 5, 1, 1, 5), random_grid(rng, 5, 5, 1, 0.1, 1)}};
  const GridF out = fuse(m, br);
  for (std::size_t k = 0; k < out.size(); ++k) {
    const double ca = br[0].confidence[k], cb = br[1].confidence[k];
    EXPECT_NEAR(out[k], (br[0].depth[k] * ca + br[1].depth[k] * cb) / (ca + cb), 1e-5);
  }
}

TEST(Fusion, IdenticalBranchesTrainToPassThrough) {
  Rng rng(12);
  std::vector<std::vector<UpsampleResult>> branches(2);
  std::vector<GridF> targets;
  for (int i = 0; i < 10; ++i) {
    const GridF truth = random_grid(rng, 12, 12, 1, 2, 8);
    GridF est = truth;
    for (auto& v : est.values()) v += static_cast<float>(rng.uniform(-0.5, 0.5));
    const UpsampleResult r{est, random_grid(rng, 12, 12, 1, 0.2, 1)};
    branches[0].push_back(r);
    branches[1].push_back(r);
    targets.push_back(truth);
  }
  auto m = build_fusion(2, 4);
  init_fusion_passthrough(m);
  TrainConfig cfg;
  cfg.epochs = 40;
  train(m.net, make_fusion_examples(branches, targets), cfg);
  const auto fused = run_fusion(m, branches, targets.size());
  std::vector<GridF> branch_depth;
  for (const auto& r : branches[0]) branch_depth.push_back(r.depth);
  EXPECT_LE(evaluate_all(fused, targets).mae, evaluate_all(branch_depth, targets).mae + 1e-3);
}

TEST(Train, OverfitsSingleImage) {
  // the input is sampled from a surface one unit below the target, so the whole initial
  // error is reachable through the biases
  SparseDepthSample s = sparsify(GridF(24, 24, 1, 5.0f), 0.2, 1);
  const GridF target(24, 24, 1, 6.0f);
  for (auto kind : {UpsamplerKind::edge, UpsamplerKind::normal, UpsamplerKind::sparse}) {
    auto m = build_upsampler(kind, 3);
    Rng rng(2);
    const auto f = random_field(rng, 24, 24);
    const TrainingExample ex{upsampler_input(kind, s, &f), target};
    TrainConfig cfg;
    cfg.epochs = 200;
    cfg.learning_rate = 1e-3;
    const auto h = train(m.net, std::span<const TrainingExample>(&ex, 1), cfg);
    ASSERT_EQ(h.size(), 200u);
    const double final_loss = masked_l1(upsample(m, s, &f).depth, target);
    // sparse convolution starts far from the data scale (unnormalized weights) and only
    // has to make progress; the normalized kinds must reach 10% of the initial loss
    if (kind == UpsamplerKind::sparse)
      EXPECT_LT(final_loss, h.front());
    else
      EXPECT_LT(final_loss, 0.1 * h.front()) << to_string(kind);
  }
}

TEST(Train, ZeroLearningRateLeavesParameters) {
  Rng rng(13);
  auto m = build_upsampler(UpsamplerKind::edge, 4);
  const auto before = m.net.flat_parameters();
  const auto s = random_sample(rng, 10, 10, 0.2);
  const auto f = random_field(rng, 10, 10);
  const TrainingExample ex{upsampler_input(UpsamplerKind::edge, s, &f), s.ground_truth};
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.epochs = 5;
  const auto h = train(m.net, std::span<const TrainingExample>(&ex, 1), cfg);
  EXPECT_EQ(m.net.flat_parameters(), before);
  for (double v : h) EXPECT_EQ(v, h.front());
}

TEST(Train, DeterministicForEqualSeeds) {
  std::vector<SceneData> scenes{small_scene(1, 24), small_scene(2, 24), small_scene(3, 24)};
  auto run = [&](std::uint64_t seed) {
    auto m = build_upsampler(UpsamplerKind::edge, 5);
    UpsamplerTraining cfg;
    cfg.train.epochs = 3;
    cfg.train.batch_size = 2;
    cfg.train.seed = seed;
    const auto h = train_upsampler(m, scenes, cfg);
    return std::pair{h, serialize_checkpoint(m.net)};
  };
  const auto a = run(9), b = run(9), c = run(10);
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
  EXPECT_NE(a.second, c.second);
}

TEST(Train, BeatsMeanFillBaseline) {
  std::vector<SceneData> train_set, test_set;
  for (int i = 0; i < 4; ++i) train_set.push_back(small_scene(100 + i));
  for (int i = 0; i < 2; ++i) test_set.push_back(small_scene(200 + i));
  auto m = build_upsampler(UpsamplerKind::edge, 6);
  UpsamplerTraining cfg;
  cfg.train.epochs = 5;
  train_upsampler(m, train_set, cfg);
  const auto res = run_upsampler(m, test_set, 0.05, 77);
  double model = 0, baseline = 0;
  for (std::size_t i = 0; i < test_set.size(); ++i) {
    const auto s = sparsify(test_set[i].depth, 0.05, sample_seed(77, i, 0, false));
    double sum = 0, n = 0;
    for (std::size_t k = 0; k < s.confidence.size(); ++k)
      if (s.confidence[k] > 0) sum += s.sparse_depth[k], n += 1;
    const GridF fill(s.ground_truth.height(), s.ground_truth.width(), 1,
                     static_cast<float>(sum / n));
    model += mae(res[i].depth, test_set[i].depth);
    baseline += mae(fill, test_set[i].depth);
  }
  EXPECT_LT(model, baseline);
}

TEST(Train, Errors) {
  auto m = build_upsampler(UpsamplerKind::edge, 1);
  EXPECT_THROW(train(m.net, std::span<const TrainingExample>(), TrainConfig{}),
               std::invalid_argument);
  EXPECT_THROW(masked_l1(GridF(2, 2, 1, 1.0f), GridF(2, 2, 1, 0.0f)), std::invalid_argument);
  GridD g;
  EXPECT_DOUBLE_EQ(masked_l1(GridF::from_rows({{1, 5}}), GridF::from_rows({{2, 0}}), &g), 1.0);
  EXPECT_EQ(g[0], -1.0);
  EXPECT_EQ(g[1], 0.0);
}

TEST(Checkpoint, RoundTripIsBitwise) {
  Rng rng(14);
  for (auto kind : {UpsamplerKind::edge, UpsamplerKind::normal, UpsamplerKind::sparse}) {
    auto m = build_upsampler(kind, 21);
    for (auto& p : m.net.params())
      for (auto& b : p.b) b = static_cast<float>(rng.uniform(-1, 1));
    const std::string path = temp_path(std::string("rt_") + to_string(kind) + ".egc");
    save_checkpoint(m, path);
    const auto loaded = load_upsampler(path);
    EXPECT_EQ(loaded.kind, kind);
    EXPECT_EQ(loaded.net.spec(), m.net.spec());
    EXPECT_EQ(loaded.net.flat_parameters(), m.net.flat_parameters());
    const auto s = random_sample(rng, 16, 16, 0.1);
    const auto f = random_field(rng, 16, 16);
    EXPECT_EQ(upsample(loaded, s, &f).depth, upsample(m, s, &f).depth);
    EXPECT_EQ(std::filesystem::file_size(path), 4 + 4 + 7 * 20 + 4 * 373u);
    std::filesystem::remove(path);
  }
  auto fm = build_fusion(2, 8);
  const std::string path = temp_path("fusion.egc");
  save_checkpoint(fm, path);
  const auto lf = load_fusion(path);
  EXPECT_EQ(lf.branches, 2u);
  EXPECT_EQ(lf.net.flat_parameters(), fm.net.flat_parameters());
  EXPECT_THROW(load_upsampler(path), CheckpointError);
  std::filesystem::remove(path);
}

TEST(Checkpoint, CorruptFilesRejected) {
  const auto m = build_upsampler(UpsamplerKind::edge, 1);
  const std::string bytes = serialize_checkpoint(m.net);
  auto as_vec = [](const std::string& s) { return std::vector<unsigned char>(s.begin(), s.end()); };
  for (std::size_t cut : {0ul, 3ul, 8ul, 50ul, bytes.size() - 1})
    EXPECT_THROW(deserialize_checkpoint(as_vec(bytes.substr(0, cut))), CheckpointError) << cut;
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(as_vec(bad)), CheckpointError);
  EXPECT_THROW(deserialize_checkpoint(as_vec(bytes + "extra")), CheckpointError);
  bad = bytes;
  bad[8 + 12] = 9;  // first layer input channels
  EXPECT_THROW(deserialize_checkpoint(as_vec(bad)), CheckpointError);
  EXPECT_THROW(load_checkpoint(temp_path("missing.egc")), IoError);
}
