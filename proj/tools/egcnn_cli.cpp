// egcnn: synthesize box-world data, build edge-dist fields, train and evaluate
// edge-guided / normalized / sparse upsamplers and the fusion network.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "egcnn/egcnn.hpp"
#include "egcnn/run_config.hpp"

namespace fs = std::filesystem;
using namespace egcnn;

namespace {

// Removes every registered output unless commit() is reached.
class OutputGuard {
 public:
  void add(const fs::path& p) { paths_.push_back(p); }
  void add_dir(const fs::path& p) { dirs_.push_back(p); }
  void commit() { committed_ = true; }
  ~OutputGuard() {
    if (committed_) return;
    std::error_code ec;
    for (const auto& p : paths_) fs::remove(p, ec);
    for (auto it = dirs_.rbegin(); it != dirs_.rend(); ++it) fs::remove(*it, ec);
  }

 private:
  std::vector<fs::path> paths_;
  std::vector<fs::path> dirs_;
  bool committed_ = false;
};

std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(9) << v;
  return os.str();
}

std::uint64_t fnv1a(const std::vector<unsigned char>& bytes, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 1099511628211ULL;
  }
  return h;
}

void require_writable_parent(const std::string& path) {
  fs::path parent = fs::path(path).parent_path();
  if (parent.empty()) parent = ".";
  if (!fs::is_directory(parent))
    throw std::invalid_argument("output directory does not exist: " + parent.string());
}

std::pair<std::size_t, std::size_t> parse_size(const std::string& s) {
  const auto x = s.find('x');
  if (x == std::string::npos) throw std::invalid_argument("size must be HxW, got '" + s + "'");
  const long h = std::stol(s.substr(0, x)), w = std::stol(s.substr(x + 1));
  if (h < 8 || w < 8) throw std::invalid_argument("size must be at least 8x8");
  return {static_cast<std::size_t>(h), static_cast<std::size_t>(w)};
}

// ---------------------------------------------------------------------------
// Dataset directory: scene_NNNN_color.png + scene_NNNN_depth.pfm pairs.

struct DatasetEntry {
  std::string name;
  fs::path color;
  fs::path depth;
};

std::vector<DatasetEntry> list_dataset(const std::string& dir) {
  std::vector<DatasetEntry> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string f = e.path().filename().string();
    const std::string suffix = "_color.png";
    if (f.size() <= suffix.size() || f.substr(f.size() - suffix.size()) != suffix) continue;
    const std::string stem = f.substr(0, f.size() - suffix.size());
    const fs::path depth = e.path().parent_path() / (stem + "_depth.pfm");
    if (!fs::exists(depth)) throw std::invalid_argument("missing depth file " + depth.string());
    out.push_back({stem, e.path(), depth});
  }
  std::sort(out.begin(), out.end(),
            [](const DatasetEntry& a, const DatasetEntry& b) { return a.name < b.name; });
  if (out.empty()) throw std::invalid_argument("no *_color.png / *_depth.pfm pairs in " + dir);
  return out;
}

/// Edge fields are cached per (image bytes, preset, ramp parameters).
EdgeDistField cached_edge_field(const DatasetEntry& entry, const fs::path& data_dir,
                                const EdgePreset& preset, const FieldParams& fp) {
  std::uint64_t h = fnv1a(detail::read_file(entry.color.string()));
  if (preset.source == EdgePreset::Source::file) h = fnv1a(detail::read_file(preset.path), h);
  std::string tag = preset.source == EdgePreset::Source::file ? "file" : preset.name;
  std::ostringstream key;
  key << std::hex << std::setw(16) << std::setfill('0') << h << '_' << tag << "_t"
      << fmt_double(fp.tau) << "_e" << fmt_double(fp.e_edge) << "_m" << fmt_double(fp.e_max)
      << ".pfm";
  const fs::path cache_dir = data_dir / ".edgecache";
  const fs::path cached = cache_dir / key.str();
  if (fs::exists(cached)) {
    GridF v = read_pfm(cached.string());
    return {std::move(v), fp.e_edge, fp.e_max, fp.tau};
  }
  EdgeDistField field = make_edge_field(read_image(entry.color.string()), preset, fp);
  std::error_code ec;
  fs::create_directories(cache_dir, ec);
  if (!ec) {
    const fs::path tmp = cached.string() + ".tmp";
    write_pfm(tmp.string(), field.values);
    fs::rename(tmp, cached, ec);
  }
  return field;
}

std::vector<SceneData> load_scenes(const std::vector<DatasetEntry>& entries, const fs::path& dir,
                                   const std::optional<EdgePreset>& preset, const FieldParams& fp) {
  std::vector<SceneData> scenes;
  for (const auto& e : entries) {
    SceneData s;
    s.depth = read_depth(e.depth.string());
    if (preset) {
      s.field = cached_edge_field(e, dir, *preset, fp);
    } else {
      s.field = unit_edge_dist_field(s.depth.height(), s.depth.width());
    }
    scenes.push_back(std::move(s));
  }
  return scenes;
}

void write_report(const std::string& path, const std::vector<MetricReport>& per_image,
                  const MetricReport& aggregate) {
  std::ostringstream os;
  os << MetricReport::csv_header << '\n';
  for (const auto& r : per_image) os << r << '\n';
  os << aggregate << '\n';
  detail::write_file(path, os.str());
}

void write_loss_csv(const std::string& path, const std::vector<double>& history) {
  std::ostringstream os;
  os << "epoch,loss\n";
  for (std::size_t e = 0; e < history.size(); ++e) os << e << ',' << fmt_double(history[e]) << '\n';
  detail::write_file(path, os.str());
}

/// Settings recorded next to a checkpoint, needed to rebuild its inputs.
struct CheckpointMeta {
  std::optional<EdgePreset> preset;
  FieldParams field;
};

CheckpointMeta read_checkpoint_meta(const std::string& ckpt, const UpsamplerModel& m,
                                    const std::string& preset_override) {
  CheckpointMeta meta;
  RunConfig cfg;
  if (fs::exists(ckpt + ".cfg")) cfg = RunConfig::load(ckpt + ".cfg");
  if (cfg.has("tau")) meta.field.tau = std::stof(cfg.get("tau"));
  if (cfg.has("e-edge")) meta.field.e_edge = std::stof(cfg.get("e-edge"));
  if (cfg.has("e-max")) meta.field.e_max = std::stof(cfg.get("e-max"));
  if (m.kind == UpsamplerKind::edge) {
    const std::string p = !preset_override.empty() ? preset_override : cfg.get("preset", "canny-k3");
    meta.preset = EdgePreset::parse(p);
  }
  return meta;
}

// ---------------------------------------------------------------------------
// Option structs

struct SynthOpts {
  std::string out, size = "128x128";
  std::size_t count = 1, rects = 6;
  std::uint64_t seed = 0;
  float texture = 20.0f, depth_min = 2.0f, depth_max = 10.0f;
};

struct EdgeFieldOpts {
  std::string image, preset = "canny-k3", out, edges_out;
  float tau = 5.0f, e_edge = 0.1f, e_max = 1.0f;
};

struct TrainOpts {
  std::string data, kind = "edge", preset = "canny-k3", out;
  double rate = 0.05, lr = 1e-3;
  std::size_t epochs = 50, batch = 1;
  std::uint64_t seed = 0;
  float tau = 5.0f, e_edge = 0.1f, e_max = 1.0f;
  bool redraw = false;
  std::string gamma = "softplus";
};

struct EvalOpts {
  std::string ckpt, data, report, preset;
  double rate = 0.05;
  std::uint64_t seed = 0;
};

struct UpsampleOpts {
  std::string ckpt, depth, conf, edge_field, out, conf_out;
  double depth_scale = 256.0;
};

struct FuseOpts {
  std::vector<std::string> branches;
  std::string data, out, ckpt, report;
  double rate = 0.05, lr = 1e-3;
  std::size_t epochs = 50, hidden = 8;
  std::uint64_t seed = 0;
};

RunConfig resolved(const CLI::App& sub) {
  RunConfig cfg;
  for (const CLI::Option* opt : sub.get_options()) {
    const std::string name = opt->get_single_name();
    if (name == "help" || name == "config" || opt->get_lnames().empty()) continue;
    if (opt->count() > 0) {
      for (const auto& r : opt->results()) cfg.append(name, r);
    } else {
      cfg.set(name, opt->get_default_str());
    }
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_synth(const SynthOpts& o, const RunConfig& resolved_cfg) {
  const auto [h, w] = parse_size(o.size);
  OutputGuard guard;
  const fs::path dir(o.out);
  if (!fs::exists(dir)) {
    fs::create_directories(dir);
    guard.add_dir(dir);
  }
  if (!fs::is_directory(dir)) throw std::invalid_argument("not a directory: " + o.out);
  nlohmann::json manifest;
  manifest["size"] = {h, w};
  manifest["seed"] = o.seed;
  manifest["scenes"] = nlohmann::json::array();
  for (std::size_t n = 0; n < o.count; ++n) {
    SceneConfig sc;
    sc.height = h;
    sc.width = w;
    sc.rectangles = o.rects;
    sc.texture_amplitude = o.texture;
    sc.depth_min = o.depth_min;
    sc.depth_max = o.depth_max;
    sc.seed = derive_seed(o.seed, n);
    const Scene scene = synth_scene(sc);
    char stem[32];
    std::snprintf(stem, sizeof stem, "scene_%04zu", n);
    const fs::path color = dir / (std::string(stem) + "_color.png");
    const fs::path depth = dir / (std::string(stem) + "_depth.pfm");
    guard.add(color);
    guard.add(depth);
    write_png(color.string(), scene.color, 8);
    write_pfm(depth.string(), scene.depth);
    nlohmann::json rects = nlohmann::json::array();
    for (const auto& r : scene.rects)
      rects.push_back({{"top", r.top}, {"left", r.left}, {"bottom", r.bottom},
                       {"right", r.right}, {"depth", r.depth}});
    manifest["scenes"].push_back({{"name", stem},
                                  {"background_depth", scene.background_depth},
                                  {"rectangles", rects}});
  }
  const fs::path mpath = dir / "manifest.json";
  const fs::path cpath = dir / "synth.cfg";
  guard.add(mpath);
  guard.add(cpath);
  detail::write_file(mpath.string(), manifest.dump(2) + "\n");
  resolved_cfg.save(cpath.string());
  guard.commit();
  std::cout << "wrote " << o.count << " scenes to " << o.out << '\n';
  return 0;
}

int cmd_edge_field(const EdgeFieldOpts& o, const RunConfig& resolved_cfg) {
  const EdgePreset preset = EdgePreset::parse(o.preset);
  require_writable_parent(o.out);
  OutputGuard guard;
  const GridF image = read_image(o.image);
  const EdgeMap edges = extract_edges(image, preset);
  const EdgeDistField field = build_edge_dist_field(edges, o.e_edge, o.e_max, o.tau);
  guard.add(o.out);
  write_edge_dist(o.out, field.values);
  if (!o.edges_out.empty()) {
    guard.add(o.edges_out);
    save_edge_map(o.edges_out, edges);
  }
  guard.add(o.out + ".cfg");
  resolved_cfg.save(o.out + ".cfg");
  guard.commit();
  std::cout << "edge pixels: " << edges.count() << '\n';
  return 0;
}

int cmd_train(const TrainOpts& o, const RunConfig& resolved_cfg) {
  const UpsamplerKind kind = parse_upsampler_kind(o.kind);
  const Gamma g = o.gamma == "softplus"     ? Gamma::softplus
                  : o.gamma == "relu_shift" ? Gamma::relu_shift
                                            : throw std::invalid_argument("unknown gamma " + o.gamma);
  std::optional<EdgePreset> preset;
  if (kind == UpsamplerKind::edge) preset = EdgePreset::parse(o.preset);
  const FieldParams fp{o.e_edge, o.e_max, o.tau};
  require_writable_parent(o.out);
  const auto entries = list_dataset(o.data);

  OutputGuard guard;
  const auto scenes = load_scenes(entries, o.data, preset, fp);
  UpsamplerModel model = build_upsampler(kind, o.seed, g);
  UpsamplerTraining cfg;
  cfg.rate = o.rate;
  cfg.redraw_each_epoch = o.redraw;
  cfg.train.learning_rate = o.lr;
  cfg.train.batch_size = o.batch;
  cfg.train.epochs = o.epochs;
  cfg.train.seed = o.seed;
  const auto history = train_upsampler(model, scenes, cfg);

  guard.add(o.out);
  guard.add(o.out + ".loss.csv");
  guard.add(o.out + ".cfg");
  save_checkpoint(model, o.out);
  write_loss_csv(o.out + ".loss.csv", history);
  resolved_cfg.save(o.out + ".cfg");
  guard.commit();
  if (!history.empty())
    std::cout << "final loss " << fmt_double(history.back()) << " after " << history.size()
              << " epochs\n";
  return 0;
}

std::vector<GridF> depths_of(const std::vector<UpsampleResult>& r) {
  std::vector<GridF> out;
  for (const auto& x : r) out.push_back(x.depth);
  return out;
}

std::vector<GridF> truths_of(const std::vector<SceneData>& s) {
  std::vector<GridF> out;
  for (const auto& x : s) out.push_back(x.depth);
  return out;
}

int cmd_eval(const EvalOpts& o, const RunConfig& resolved_cfg) {
  require_writable_parent(o.report);
  const UpsamplerModel model = load_upsampler(o.ckpt);
  const CheckpointMeta meta = read_checkpoint_meta(o.ckpt, model, o.preset);
  const auto entries = list_dataset(o.data);
  OutputGuard guard;
  const auto scenes = load_scenes(entries, o.data, meta.preset, meta.field);
  const auto outputs = run_upsampler(model, scenes, o.rate, o.seed);
  std::vector<MetricReport> per;
  const auto preds = depths_of(outputs);
  const auto truth = truths_of(scenes);
  const MetricReport agg = evaluate_all(preds, truth, &per);
  guard.add(o.report);
  guard.add(o.report + ".cfg");
  write_report(o.report, per, agg);
  resolved_cfg.save(o.report + ".cfg");
  guard.commit();
  std::cout << MetricReport::csv_header << '\n' << agg << '\n';
  return 0;
}

int cmd_upsample(const UpsampleOpts& o, const RunConfig& resolved_cfg) {
  const UpsamplerModel model = load_upsampler(o.ckpt);
  if (model.kind == UpsamplerKind::edge && o.edge_field.empty())
    throw std::invalid_argument("checkpoint is an edge-guided model: --edge-field is required");
  require_writable_parent(o.out);
  SparseDepthSample s;
  s.sparse_depth = read_depth(o.depth, o.depth_scale);
  if (has_extension(o.conf, ".pfm")) {
    s.confidence = read_pfm(o.conf);
  } else {
    s.confidence = read_image(o.conf);
    for (auto& v : s.confidence.values()) v = v != 0.0f ? 1.0f : 0.0f;
  }
  if (!s.confidence.same_shape(s.sparse_depth))
    throw std::invalid_argument("depth " + s.sparse_depth.shape_string() + " and confidence " +
                                s.confidence.shape_string() + " are not aligned");
  std::optional<EdgeDistField> field;
  if (!o.edge_field.empty()) {
    field = EdgeDistField{read_edge_dist(o.edge_field)};
    if (!field->values.same_shape(s.sparse_depth))
      throw std::invalid_argument("edge-dist field is not aligned with the depth map");
  }
  const UpsampleResult r = upsample(model, s, field ? &*field : nullptr);
  const std::string conf_out = o.conf_out.empty() ? o.out + ".conf.pfm" : o.conf_out;
  OutputGuard guard;
  guard.add(o.out);
  guard.add(conf_out);
  guard.add(o.out + ".cfg");
  write_depth(o.out, r.depth, o.depth_scale);
  write_pfm(conf_out, r.confidence);
  resolved_cfg.save(o.out + ".cfg");
  guard.commit();
  return 0;
}

struct Branches {
  std::vector<std::string> names;
  std::vector<std::vector<UpsampleResult>> outputs;
};

Branches run_branches(const std::vector<std::string>& ckpts, const std::string& data, double rate,
                      std::uint64_t seed, std::vector<GridF>& truth) {
  if (ckpts.size() < 2) throw std::invalid_argument("fusion needs at least 2 --branch checkpoints");
  const auto entries = list_dataset(data);
  Branches b;
  for (const auto& c : ckpts) {
    const UpsamplerModel m = load_upsampler(c);
    const CheckpointMeta meta = read_checkpoint_meta(c, m, "");
    const auto scenes = load_scenes(entries, data, meta.preset, meta.field);
    if (truth.empty()) truth = truths_of(scenes);
    b.outputs.push_back(run_upsampler(m, scenes, rate, seed));
    std::string name = to_string(m.kind);
    if (meta.preset) {
      const std::string& p = meta.preset->name;
      name = p.rfind("canny-", 0) == 0 ? p.substr(6) : p;
    }
    b.names.push_back(name);
  }
  return b;
}

int cmd_fuse_train(const FuseOpts& o, const RunConfig& resolved_cfg) {
  require_writable_parent(o.out);
  std::vector<GridF> truth;
  const Branches b = run_branches(o.branches, o.data, o.rate, o.seed, truth);
  FusionModel model = build_fusion(b.outputs.size(), o.seed, o.hidden);
  init_fusion_passthrough(model);
  const auto examples = make_fusion_examples(b.outputs, truth);
  TrainConfig tc;
  tc.learning_rate = o.lr;
  tc.epochs = o.epochs;
  tc.seed = o.seed;
  const auto history = train(model.net, examples, tc);
  OutputGuard guard;
  guard.add(o.out);
  guard.add(o.out + ".loss.csv");
  guard.add(o.out + ".cfg");
  save_checkpoint(model, o.out);
  write_loss_csv(o.out + ".loss.csv", history);
  resolved_cfg.save(o.out + ".cfg");
  guard.commit();
  return 0;
}

int cmd_fuse_eval(const FuseOpts& o, const RunConfig& resolved_cfg) {
  require_writable_parent(o.report);
  const FusionModel model = load_fusion(o.ckpt);
  std::vector<GridF> truth;
  const Branches b = run_branches(o.branches, o.data, o.rate, o.seed, truth);
  const auto fused = run_fusion(model, b.outputs, truth.size());
  std::vector<MetricReport> per;
  const MetricReport agg = evaluate_all(fused, truth, &per);
  OutputGuard guard;
  guard.add(o.report);
  guard.add(o.report + ".cfg");
  write_report(o.report, per, agg);
  resolved_cfg.save(o.report + ".cfg");
  guard.commit();
  std::cout << "method," << MetricReport::csv_header << '\n';
  for (std::size_t k = 0; k < b.names.size(); ++k)
    std::cout << "EGCNN-Ablation(" << b.names[k] << ")," << evaluate_all(depths_of(b.outputs[k]), truth)
              << '\n';
  std::cout << "EGCNN-Full," << agg << '\n';
  return 0;
}

// Expand "--config FILE" into flags placed before the command-line ones, so explicit
// flags win. Keys must name long options of the chosen subcommand.
std::vector<std::string> expand_config(CLI::App& app, std::vector<std::string> args) {
  if (args.empty()) return args;
  CLI::App* sub = nullptr;
  for (CLI::App* s : app.get_subcommands({}))
    if (s->get_name() == args.front()) sub = s;
  auto it = std::find(args.begin(), args.end(), "--config");
  if (!sub || it == args.end()) return args;
  if (it + 1 == args.end()) throw ConfigError("--config requires a file");
  const RunConfig cfg = RunConfig::load(*(it + 1));
  args.erase(it, it + 2);
  std::set<std::string> given;
  for (const auto& a : args)
    if (a.rfind("--", 0) == 0) given.insert(a.substr(2, a.find('=') - 2));
  std::vector<std::string> injected;
  for (const auto& [key, value] : cfg.entries()) {
    const CLI::Option* opt = sub->get_option_no_throw("--" + key);
    if (!opt || key == "config" || key == "help")
      throw ConfigError("unknown config key '" + key + "' for command " + sub->get_name());
    if (given.count(key)) continue;
    std::istringstream lines(value);
    std::string item;
    while (std::getline(lines, item)) {
      if (opt->get_expected_min() == 0) {
        if (item == "true" || item == "1") injected.push_back("--" + key);
      } else {
        injected.push_back("--" + key);
        injected.push_back(item);
      }
    }
  }
  args.insert(args.begin() + 1, injected.begin(), injected.end());
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Edge-guided normalized convolution for sparse depth upsampling"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  SynthOpts so;
  auto* synth = app.add_subcommand("synth", "Generate synthetic box-world scenes");
  synth->add_option("--out", so.out, "Output directory")->required();
  synth->add_option("--count", so.count, "Number of scenes");
  synth->add_option("--size", so.size, "Image size HxW");
  synth->add_option("--seed", so.seed, "Random seed");
  synth->add_option("--rects", so.rects, "Rectangles per scene");
  synth->add_option("--texture", so.texture, "Stripe texture amplitude (color only)");
  synth->add_option("--depth-min", so.depth_min, "Nearest rectangle depth");
  synth->add_option("--depth-max", so.depth_max, "Background depth");

  EdgeFieldOpts eo;
  auto* edge = app.add_subcommand("edge-field", "Build an edge-dist field from an image");
  edge->add_option("--image", eo.image, "Guidance image (PNG/PGM/PPM)")->required()->check(CLI::ExistingFile);
  edge->add_option("--preset", eo.preset, "canny-k3 | canny-k5 | file:PATH");
  edge->add_option("--tau", eo.tau, "Ramp width in pixels");
  edge->add_option("--e-edge", eo.e_edge, "Field value on edges");
  edge->add_option("--e-max", eo.e_max, "Saturation value");
  edge->add_option("--out", eo.out, "Output field (.pfm, or 16-bit .pgm/.png)")->required();
  edge->add_option("--edges-out", eo.edges_out, "Also write the binary edge map");

  TrainOpts to;
  auto* trn = app.add_subcommand("train", "Train an upsampling network");
  trn->add_option("--data", to.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  trn->add_option("--kind", to.kind, "edge | normal | sparse");
  trn->add_option("--preset", to.preset, "Edge preset for kind=edge");
  trn->add_option("--rate", to.rate, "Sampling rate");
  trn->add_option("--epochs", to.epochs, "Training epochs");
  trn->add_option("--seed", to.seed, "Random seed");
  trn->add_option("--lr", to.lr, "Adam learning rate");
  trn->add_option("--batch", to.batch, "Batch size");
  trn->add_option("--tau", to.tau, "Edge ramp width");
  trn->add_option("--e-edge", to.e_edge, "Field value on edges");
  trn->add_option("--e-max", to.e_max, "Saturation value");
  trn->add_option("--gamma", to.gamma, "softplus | relu_shift");
  trn->add_flag("--redraw", to.redraw, "Redraw sparse samples every epoch");
  trn->add_option("--out", to.out, "Checkpoint path")->required();

  EvalOpts vo;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  ev->add_option("--ckpt", vo.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", vo.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--rate", vo.rate, "Sampling rate");
  ev->add_option("--seed", vo.seed, "Sampling seed");
  ev->add_option("--preset", vo.preset, "Override the edge preset recorded with the checkpoint");
  ev->add_option("--report", vo.report, "Metric CSV")->required();

  UpsampleOpts uo;
  auto* up = app.add_subcommand("upsample", "Upsample one sparse depth map");
  up->add_option("--ckpt", uo.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  up->add_option("--depth", uo.depth, "Sparse depth (PFM or 16-bit PNG/PGM)")->required()->check(CLI::ExistingFile);
  up->add_option("--conf", uo.conf, "Confidence (PFM, or image with nonzero = valid)")->required()->check(CLI::ExistingFile);
  up->add_option("--edge-field", uo.edge_field, "Edge-dist field (PFM or 16-bit PGM/PNG)")->check(CLI::ExistingFile);
  up->add_option("--depth-scale", uo.depth_scale, "Scale of 16-bit depth files");
  up->add_option("--out", uo.out, "Dense depth output")->required();
  up->add_option("--conf-out", uo.conf_out, "Output confidence PFM (default OUT.conf.pfm)");

  FuseOpts fo;
  auto add_fuse_common = [&fo](CLI::App* s) {
    s->add_option("--branch", fo.branches, "Branch checkpoint (repeat)")->required()->check(CLI::ExistingFile);
    s->add_option("--data", fo.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    s->add_option("--rate", fo.rate, "Sampling rate");
    s->add_option("--seed", fo.seed, "Random seed");
  };
  auto* ft = app.add_subcommand("fuse-train", "Train the fusion network over frozen branches");
  add_fuse_common(ft);
  ft->add_option("--epochs", fo.epochs, "Training epochs");
  ft->add_option("--lr", fo.lr, "Adam learning rate");
  ft->add_option("--hidden", fo.hidden, "Hidden width of the 3x3 layer");
  ft->add_option("--out", fo.out, "Fusion checkpoint")->required();
  auto* fe = app.add_subcommand("fuse-eval", "Evaluate fusion against its branches");
  add_fuse_common(fe);
  fe->add_option("--ckpt", fo.ckpt, "Fusion checkpoint")->required()->check(CLI::ExistingFile);
  fe->add_option("--report", fo.report, "Metric CSV")->required();

  for (CLI::App* s : app.get_subcommands({}))
    s->add_option("--config", "key=value configuration file (keys are option names)");

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = expand_config(app, args);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }

  try {
    if (*synth) return cmd_synth(so, resolved(*synth));
    if (*edge) return cmd_edge_field(eo, resolved(*edge));
    if (*trn) return cmd_train(to, resolved(*trn));
    if (*ev) return cmd_eval(vo, resolved(*ev));
    if (*up) return cmd_upsample(uo, resolved(*up));
    if (*ft) return cmd_fuse_train(fo, resolved(*ft));
    if (*fe) return cmd_fuse_eval(fo, resolved(*fe));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
