#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "egcnn/data.hpp"
#include "egcnn/edge_field.hpp"
#include "egcnn/image_io.hpp"
#include "egcnn/metrics.hpp"
#include "egcnn/network.hpp"

namespace egcnn {

/// Where edge maps come from: one of the two Canny presets or an external binary map.
struct EdgePreset {
  enum class Source { canny, file } source = Source::canny;
  CannyConfig canny = CannyConfig::k3();
  std::string path;
  std::string name = "canny-k3";

  static EdgePreset parse(const std::string& s) {
    EdgePreset p;
    p.name = s;
    if (s == "canny-k3") {
      p.canny = CannyConfig::k3();
    } else if (s == "canny-k5") {
      p.canny = CannyConfig::k5();
    } else if (s.rfind("file:", 0) == 0 && s.size() > 5) {
      p.source = Source::file;
      p.path = s.substr(5);
    } else {
      throw std::invalid_argument("unknown edge preset '" + s +
                                  "' (expected canny-k3, canny-k5 or file:PATH)");
    }
    return p;
  }
};

struct FieldParams {
  float e_edge = 0.1f;
  float e_max = 1.0f;
  float tau = 5.0f;
};

inline EdgeMap extract_edges(const GridF& image, const EdgePreset& preset) {
  if (preset.source == EdgePreset::Source::file) {
    EdgeMap m = load_edge_map(preset.path);
    if (m.height != image.height() || m.width != image.width())
      throw std::invalid_argument("edge map '" + preset.path + "' does not match image size");
    return m;
  }
  return canny_edges(image, preset.canny);
}

inline EdgeDistField make_edge_field(const GridF& image, const EdgePreset& preset,
                                     const FieldParams& fp = {}) {
  return build_edge_dist_field(extract_edges(image, preset), fp.e_edge, fp.e_max, fp.tau);
}

/// One scene ready for the upsampler: its guidance field and dense ground truth.
struct SceneData {
  GridF depth;
  EdgeDistField field;
};

/// Seed for the sparse draw of scene `index`; `epoch` only matters when redrawing.
inline std::uint64_t sample_seed(std::uint64_t seed, std::size_t index, std::size_t epoch,
                                 bool redraw_each_epoch) {
  const std::uint64_t base = derive_seed(seed, index);
  return redraw_each_epoch ? derive_seed(base, epoch + 1) : base;
}

inline TrainingExample make_training_example(UpsamplerKind kind, const SceneData& scene,
                                             double rate, std::uint64_t seed) {
  const SparseDepthSample s = sparsify(scene.depth, rate, seed);
  return {upsampler_input(kind, s, &scene.field), scene.depth};
}

struct UpsamplerTraining {
  double rate = 0.05;
  bool redraw_each_epoch = false;
  TrainConfig train;
};

inline std::vector<double> train_upsampler(UpsamplerModel& model, std::span<const SceneData> scenes,
                                           const UpsamplerTraining& cfg) {
  return train(
      model.net, scenes.size(),
      [&](std::size_t i, std::size_t epoch) {
        return make_training_example(
            model.kind, scenes[i], cfg.rate,
            sample_seed(cfg.train.seed, i, epoch, cfg.redraw_each_epoch));
      },
      cfg.train);
}

/// Upsample every scene with a fixed per-scene sparse draw.
inline std::vector<UpsampleResult> run_upsampler(const UpsamplerModel& model,
                                                 std::span<const SceneData> scenes, double rate,
                                                 std::uint64_t seed) {
  std::vector<UpsampleResult> out;
  out.reserve(scenes.size());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const SparseDepthSample s = sparsify(scenes[i].depth, rate, sample_seed(seed, i, 0, false));
    out.push_back(upsample(model, s, &scenes[i].field));
  }
  return out;
}

/// Fusion examples over frozen branch outputs: branch_outputs[b][i] is branch b on scene i.
inline std::vector<TrainingExample> make_fusion_examples(
    std::span<const std::vector<UpsampleResult>> branch_outputs, std::span<const GridF> targets) {
  std::vector<TrainingExample> out;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    std::vector<UpsampleResult> per;
    for (const auto& b : branch_outputs) per.push_back(b.at(i));
    out.push_back({LayerIO<float>{fusion_input(per), {}, {}}, targets[i]});
  }
  return out;
}

inline std::vector<GridF> run_fusion(const FusionModel& model,
                                     std::span<const std::vector<UpsampleResult>> branch_outputs,
                                     std::size_t count) {
  std::vector<GridF> out;
  for (std::size_t i = 0; i < count; ++i) {
    std::vector<UpsampleResult> per;
    for (const auto& b : branch_outputs) per.push_back(b.at(i));
    out.push_back(fuse(model, per));
  }
  return out;
}

inline MetricReport evaluate_all(std::span<const GridF> predictions, std::span<const GridF> truth,
                                 std::vector<MetricReport>* per_image = nullptr) {
  if (predictions.size() != truth.size())
    throw std::invalid_argument("evaluate_all: prediction/truth count mismatch");
  std::vector<MetricReport> reports;
  for (std::size_t i = 0; i < truth.size(); ++i) reports.push_back(evaluate(predictions[i], truth[i]));
  if (per_image) *per_image = reports;
  return mean_report(reports);
}

}  // namespace egcnn
