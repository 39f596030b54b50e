// bdry: command-line front end for boundary attributions on small ReLU nets.

#include <bdry/attribution.hpp>
#include <bdry/boundary_search.hpp>
#include <bdry/config.hpp>
#include <bdry/datasets.hpp>
#include <bdry/experiments.hpp>
#include <bdry/io.hpp>
#include <bdry/metrics.hpp>
#include <bdry/render.hpp>
#include <bdry/training.hpp>

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace bdry;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::size_t threads = 1;
};

struct Command {
  CLI::App* app = nullptr;
  std::vector<std::string> keys;
  std::map<std::string, std::string> flags;
  std::map<std::string, CLI::Option*> options;

  void key(const std::string& k, const std::string& help) {
    std::string flag = "--" + k;
    std::replace(flag.begin(), flag.end(), '_', '-');
    keys.push_back(k);
    options[k] = app->add_option(flag, flags[k], help);
  }
};

/// Config file entries, then flags on top. `seed` is always present.
KeyValues resolve(const Command& cmd, const Globals& g) {
  KeyValues kv;
  if (!g.config.empty()) {
    const KeyValues file = KeyValues::load(g.config);
    std::vector<std::string_view> allowed(cmd.keys.begin(), cmd.keys.end());
    allowed.push_back("seed");
    file.require_known(allowed);
    for (const auto& [k, v] : file.entries()) kv.set(k, v);
  }
  for (const std::string& k : cmd.keys) {
    if (cmd.options.at(k)->count() > 0) kv.set(k, cmd.flags.at(k));
  }
  if (g.seed) kv.set("seed", std::to_string(*g.seed));
  if (!kv.contains("seed")) kv.set("seed", "0");
  return kv;
}

void defaults(KeyValues& kv, const std::vector<std::pair<std::string, std::string>>& d) {
  for (const auto& [k, v] : d) {
    if (!kv.contains(k)) kv.set(k, v);
  }
}

const std::string& require(const KeyValues& kv, std::string_view key) {
  const std::string* v = kv.find(key);
  if (!v || v->empty()) throw InputError("missing required parameter \"" + std::string(key) + "\"");
  return *v;
}

double number(const KeyValues& kv, std::string_view key) { return parse_double(require(kv, key), key); }
std::size_t count(const KeyValues& kv, std::string_view key) { return parse_u64(require(kv, key), key); }

std::pair<double, double> clip_range(const KeyValues& kv) {
  const std::string& v = require(kv, "clip");
  if (v == "none") return {-std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
  const std::vector<double> r = parse_double_list(v, "clip");
  if (r.size() != 2 || !(r[0] < r[1])) throw FormatError("clip expects lo,hi with lo < hi", 0);
  return {r[0], r[1]};
}

/// `attack` is default (toy preset), none, or a comma list of attack files.
/// `epsilons`, when set, replaces the PGD radii and the CW/AutoPGD radius.
std::vector<AttackConfig> attack_list(const KeyValues& kv) {
  const std::string& spec = require(kv, "attack");
  std::vector<AttackConfig> out;
  if (spec == "default") {
    const auto [lo, hi] = clip_range(kv);
    out = presets::toy(number(kv, "max_eps"), lo, hi, count(kv, "restarts"));
  } else if (spec != "none") {
    for (const std::string& file : split_list(spec)) out.push_back(parse_attack_config(KeyValues::load(file)));
  }
  if (const std::string* e = kv.find("epsilons"); e && !e->empty()) {
    const std::vector<double> eps = parse_double_list(*e, "epsilons");
    for (AttackConfig& c : out) {
      c.epsilons = c.method == AttackMethod::pgd ? eps : std::vector<double>{eps.back()};
      c.validate();
    }
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  detail::write_file(path, std::vector<char>(text.begin(), text.end()));
}

PixelAttribution pixels(const Tensor& t) {
  if (t.shape().size() == 1) return PixelAttribution(1, t.size(), t.raw());
  return PixelAttribution::from_tensor(t);
}

RgbImage heatmap(const Tensor& t, const KeyValues& kv) {
  RenderOptions opt;
  if (const std::string& b = require(kv, "blur"); b != "auto") opt.blur_radius = parse_double(b, "blur");
  return render_heatmap(pixels(t), opt);
}

// ---------------------------------------------------------------------------

const std::vector<std::pair<std::string, std::string>> kAttackDefaults = {
    {"attack", "default"}, {"max_eps", "3"}, {"clip", "none"}, {"restarts", "8"}};

void add_attack_keys(Command& c) {
  c.key("attack", "default | none | comma list of attack config files");
  c.key("max_eps", "largest radius of the default attack preset");
  c.key("clip", "input range lo,hi or none");
  c.key("restarts", "randomly started PGD copies in the default preset");
  c.key("epsilons", "override attack radii (comma list)");
}

int cmd_attribute(const KeyValues& kv, const Globals& g) {
  const Tensor x = load_tensor(require(kv, "input"));
  const Network net = load_model(require(kv, "model"), x.shape());
  const std::string& method = require(kv, "method");
  const std::string& t = require(kv, "target");
  std::optional<std::size_t> target;
  if (t != "predicted") target = parse_u64(t, "target");
  IGConfig ig{count(kv, "steps")};
  const auto [lo, hi] = clip_range(kv);

  AttributionMap m;
  if (method == "sm") {
    m = saliency_map(net, x, target);
  } else if (method == "gti") {
    m = grad_times_input(net, x, target);
  } else if (method == "ig") {
    m = integrated_gradients(net, x, Tensor::filled(x.shape(), number(kv, "baseline")), target, ig);
  } else if (method == "sg") {
    m = smooth_gradient(net, x, target, number(kv, "sg_sigma"), count(kv, "sg_samples"), count(kv, "seed"));
  } else if (method == "agi") {
    AgiConfig a;
    a.eps = number(kv, "agi_eps");
    a.topk = std::min(count(kv, "agi_topk"), net.num_classes() - 1);
    a.max_iters = count(kv, "agi_iters");
    a.seed = count(kv, "seed");
    a.clip_lo = lo;
    a.clip_hi = hi;
    m = agi(net, x, a, target);
  } else if (needs_boundary(method)) {
    const BoundaryResult b = boundary_search_ensemble(net, x, attack_list(kv), target);
    m = method == "bsm" ? boundary_saliency_map(net, x, b) : boundary_integrated_gradients(net, x, b, ig);
  } else {
    throw InputError("unknown method \"" + method + "\"");
  }

  KeyValues meta = m.meta;
  meta.set("method", m.method);
  meta.set("target_class", std::to_string(m.target_class));
  meta.set("shape", shape_string(m.values.shape()));
  const fs::path out(g.out);
  const std::string& name = require(kv, "name");
  fs::create_directories(out);
  save_tensor(m.values, out / (name + ".bdt"));
  write_text(out / (name + ".meta"), meta.to_text());
  write_text(out / "config.txt", kv.to_text());
  return 0;
}

int cmd_boundary(const KeyValues& kv, const Globals& g) {
  const Tensor x = load_tensor(require(kv, "input"));
  const Network net = load_model(require(kv, "model"), x.shape());
  const BoundaryResult b = boundary_search_ensemble(net, x, attack_list(kv));
  KeyValues rec;
  rec.set("success", b.success ? "true" : "false");
  rec.set("distance", format_double(b.distance));
  rec.set("method", b.method);
  rec.set("refined", b.refined ? "true" : "false");
  rec.set("original_class", std::to_string(b.original_class));
  rec.set("adversarial_class", std::to_string(b.adversarial_class));
  const fs::path out(g.out);
  fs::create_directories(out);
  save_tensor(b.adversarial, out / "adversarial.bdt");
  if (b.normal) save_tensor(*b.normal, out / "normal.bdt");
  write_text(out / "boundary.txt", rec.to_text());
  write_text(out / "config.txt", kv.to_text());
  std::cout << "success=" << rec.get("success", "") << " distance=" << rec.get("distance", "") << "\n";
  return 0;
}

int cmd_evaluate(const KeyValues& kv, const Globals& g) {
  const fs::path dir(require(kv, "attributions"));
  std::map<std::string, BoundingBox> boxes;
  for (const BoxRecord& r : load_boxes_csv(require(kv, "boxes"))) boxes[r.id] = r.box;
  std::vector<fs::path> files;
  for (const fs::directory_entry& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".bdt") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<MetricRow> rows;
  std::vector<std::string> skipped;
  for (const fs::path& f : files) {
    const std::string id = f.stem().string();
    const auto box = boxes.find(id);
    if (box == boxes.end()) {
      skipped.push_back(id);
      continue;
    }
    std::string method = "unknown";
    if (fs::path meta = fs::path(f).replace_extension(".meta"); fs::exists(meta)) {
      method = KeyValues::load(meta).get("method", method);
    }
    rows.push_back(score_attribution(id, method, pixels(load_tensor(f)), box->second));
  }
  const fs::path out(g.out);
  fs::create_directories(out);
  write_text(out / "metrics.csv", metric_csv(rows));
  std::string skip_text;
  for (const std::string& s : skipped) skip_text += s + "\n";
  write_text(out / "skipped.txt", skip_text);
  write_text(out / "config.txt", kv.to_text());
  if (!skipped.empty()) {
    std::cerr << "skipped " << skipped.size() << " attribution(s) without a box:";
    for (const std::string& s : skipped) std::cerr << " " << s;
    std::cerr << "\n";
  }
  return 0;
}

int cmd_render(const KeyValues& kv, const Globals& g) {
  const RgbImage img = heatmap(load_tensor(require(kv, "attribution")), kv);
  const std::vector<char> bytes = encode_ppm(img, count(kv, "scale"));
  const fs::path out(g.out);
  fs::create_directories(out);
  detail::write_file(out / "heatmap.ppm", bytes);
  write_text(out / "config.txt", kv.to_text());
  return 0;
}

TrainConfig train_config(const KeyValues& kv) {
  TrainConfig c;
  c.arch = require(kv, "arch");
  c.epochs = count(kv, "epochs");
  c.lr = number(kv, "lr");
  c.momentum = number(kv, "momentum");
  c.batch_size = count(kv, "batch_size");
  if (const std::string& r = require(kv, "robust_eps"); r != "none") c.robust_eps = parse_double(r, "robust_eps");
  const std::string& norm = require(kv, "norm");
  if (norm != "l2" && norm != "linf") throw FormatError("unknown norm \"" + norm + "\"", 0);
  c.norm = norm == "l2" ? Norm::l2 : Norm::linf;
  c.seed = count(kv, "seed");
  return c;
}

const std::vector<std::pair<std::string, std::string>> kTrainDefaults = {
    {"epochs", "50"}, {"lr", "0.05"}, {"momentum", "0.9"}, {"batch_size", "32"}, {"norm", "l2"},
    {"data_seed", "1"}};

void add_train_keys(Command& c) {
  c.key("dataset", "blobs2d | rings2d | patches8x8 | twopatch8x8");
  c.key("n_train", "training set size");
  c.key("data_seed", "dataset seed (test sets use data_seed + 1)");
  c.key("arch", "linear | onelayer | mlp16 | conv8");
  c.key("epochs", "training epochs");
  c.key("lr", "learning rate");
  c.key("momentum", "SGD momentum");
  c.key("batch_size", "minibatch size");
  c.key("robust_eps", "PGD-10 adversarial training radius or none");
  c.key("norm", "l2 | linf for adversarial training");
}

int cmd_train_toy(const KeyValues& kv, const Globals& g) {
  const ToyDataset ds = synth_dataset(require(kv, "dataset"), count(kv, "n_train"), count(kv, "data_seed"));
  const Network net = train_toy(ds, train_config(kv));
  KeyValues stats;
  stats.set("train_accuracy", format_double(accuracy(net, ds)));
  const fs::path out(g.out);
  fs::create_directories(out);
  save_model(net, out / "model.bdn");
  write_text(out / "train.txt", stats.to_text());
  write_text(out / "config.txt", kv.to_text());
  if (require(kv, "export_data") == "true") {
    const ToyDataset test = synth_dataset(require(kv, "dataset"), count(kv, "n_test"), count(kv, "data_seed") + 1);
    fs::create_directories(out / "data");
    std::string labels;
    std::vector<BoxRecord> boxes;
    for (std::size_t i = 0; i < test.size(); ++i) {
      save_tensor(test.inputs[i], out / "data" / (std::to_string(i) + ".bdt"));
      labels += std::to_string(i) + "," + std::to_string(test.labels[i]) + "\n";
      if (test.has_boxes()) boxes.push_back({std::to_string(i), test.boxes[i]});
    }
    write_text(out / "data" / "labels.csv", "id,label\n" + labels);
    if (test.has_boxes()) write_text(out / "data" / "boxes.csv", boxes_csv(boxes));
  }
  std::cout << "train_accuracy=" << stats.get("train_accuracy", "") << "\n";
  return 0;
}

int cmd_experiment(KeyValues kv, const Globals& g) {
  const std::string name = require(kv, "name");
  static const std::map<std::string, std::pair<std::string, std::string>> kData = {
      {"alignment", {"blobs2d", "mlp16"}},
      {"localization", {"patches8x8", "conv8"}},
      {"correlation", {"patches8x8", "conv8"}},
      {"smoothing", {"blobs2d", "onelayer"}},
      {"baseline-sensitivity", {"twopatch8x8", "mlp16"}}};
  const auto it = kData.find(name);
  if (it == kData.end()) throw InputError("unknown experiment \"" + name + "\"");
  defaults(kv, {{"dataset", it->second.first}, {"arch", it->second.second}, {"n_train", "200"}, {"n_test", "50"},
                {"robust_eps", name == "alignment" ? "0.5" : "none"}, {"model", "none"}});
  defaults(kv, kTrainDefaults);
  defaults(kv, kAttackDefaults);
  defaults(kv, {{"methods", "sm,gti,ig,sg,bsm,big,agi"}, {"sigmas", "0,0.1,0.25,0.5,1"}, {"n_noise", "50"},
                {"smooth_eps", "3"}, {"smooth_iters", "40"}, {"steps", "20"}, {"sg_sigma", "0.5"},
                {"sg_samples", "50"}, {"agi_eps", "0.5"}, {"agi_topk", "10"}, {"agi_iters", "15"},
                {"keep_maps", "2"}, {"blur", "auto"}});

  const ToyDataset train = synth_dataset(require(kv, "dataset"), count(kv, "n_train"), count(kv, "data_seed"));
  const ToyDataset test = synth_dataset(require(kv, "dataset"), count(kv, "n_test"), count(kv, "data_seed") + 1);
  if (require(kv, "clip") == "none") {
    kv.set("clip", format_double(test.domain_lo) + "," + format_double(test.domain_hi));
  }

  ExperimentConfig cfg;
  cfg.attacks = attack_list(kv);
  if (cfg.attacks.empty()) throw InputError("experiments need at least one attack");
  cfg.max_eps = number(kv, "max_eps");
  cfg.restarts = count(kv, "restarts");
  cfg.ig.steps = count(kv, "steps");
  cfg.sg_sigma = number(kv, "sg_sigma");
  cfg.sg_samples = count(kv, "sg_samples");
  cfg.agi.eps = number(kv, "agi_eps");
  cfg.agi.topk = count(kv, "agi_topk");
  cfg.agi.max_iters = count(kv, "agi_iters");
  cfg.seed = count(kv, "seed");
  cfg.agi.seed = cfg.seed;
  cfg.threads = g.threads;
  cfg.keep_maps = count(kv, "keep_maps");

  std::vector<LabeledNet> nets;
  TrainConfig tc = train_config(kv);
  if (const std::string& model = require(kv, "model"); model != "none") {
    nets.emplace_back("model", load_model(model, test.input_shape));
  } else if (name == "alignment") {
    const std::optional<double> robust = tc.robust_eps;
    tc.robust_eps.reset();
    nets.emplace_back("standard", train_toy(train, tc));
    if (robust) {
      tc.robust_eps = robust;
      nets.emplace_back("robust", train_toy(train, tc));
    }
  } else {
    nets.emplace_back(tc.robust_eps ? "robust" : "standard", train_toy(train, tc));
  }

  ExperimentReport rep;
  if (name == "alignment") {
    rep = run_alignment(nets, test, cfg);
  } else if (name == "localization") {
    rep = run_localization(nets[0].second, test, split_list(require(kv, "methods")), cfg);
  } else if (name == "correlation") {
    rep = run_correlation(nets[0].second, test, cfg);
  } else if (name == "smoothing") {
    SmoothingConfig sc;
    sc.n_noise = count(kv, "n_noise");
    sc.eps = number(kv, "smooth_eps");
    sc.iterations = count(kv, "smooth_iters");
    sc.seed = cfg.seed;
    std::tie(sc.clip_lo, sc.clip_hi) = clip_range(kv);
    sc.threads = g.threads;
    rep = run_smoothing(nets[0].second, test, parse_double_list(require(kv, "sigmas"), "sigmas"), sc);
  } else {
    rep = run_baseline_sensitivity(nets[0].second, test, cfg);
  }

  const std::string config_text = kv.to_text();
  char hash[17];
  std::snprintf(hash, sizeof(hash), "%016llx", static_cast<unsigned long long>(fnv1a64(config_text)));
  const fs::path run = fs::path(g.out) / (name + "-" + hash);
  fs::create_directories(run / "models");
  write_text(run / "config.txt", config_text);
  write_text(run / "report.csv", report_csv(rep.rows));
  write_text(run / "summary.csv", report_csv(rep.summary));
  std::string counts = "group,evaluated,skipped\n";
  for (const GroupCount& c : rep.counts) {
    counts += c.group + "," + std::to_string(c.evaluated) + "," + std::to_string(c.skipped) + "\n";
  }
  write_text(run / "counts.csv", counts);
  for (const auto& [label, net] : nets) save_model(net, run / "models" / (label + ".bdn"));
  if (!rep.maps.empty()) fs::create_directories(run / "maps");
  for (const auto& [stem, values] : rep.maps) {
    save_tensor(values, run / "maps" / (stem + ".bdt"));
    write_ppm(heatmap(values, kv), run / "maps" / (stem + ".ppm"), values.shape().size() == 1 ? 16 : 8);
  }
  std::cout << run.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Boundary-based attributions for small ReLU classifiers"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "key = value file; flags override it");
  app.add_option("--seed", g.seed, "seed for every stochastic step");
  app.add_option("--out", g.out, "output directory")->capture_default_str();
  app.add_option("--threads", g.threads, "worker threads")->check(CLI::PositiveNumber)->capture_default_str();

  std::map<std::string, Command> cmds;
  auto sub = [&](const std::string& name, const std::string& help) -> Command& {
    Command& c = cmds[name];
    c.app = app.add_subcommand(name, help);
    c.app->fallthrough();
    return c;
  };

  Command& attribute = sub("attribute", "compute one attribution map");
  attribute.key("model", "model file");
  attribute.key("input", "input tensor file");
  attribute.key("method", "sm | gti | ig | sg | bsm | big | agi");
  attribute.key("target", "class index or predicted");
  attribute.key("steps", "IG/BIG trapezoid nodes");
  attribute.key("baseline", "constant IG baseline value");
  attribute.key("sg_sigma", "SmoothGrad noise level");
  attribute.key("sg_samples", "SmoothGrad samples");
  attribute.key("agi_eps", "AGI l-inf radius");
  attribute.key("agi_topk", "AGI target classes");
  attribute.key("agi_iters", "AGI iterations per target");
  attribute.key("name", "output file stem");
  add_attack_keys(attribute);

  Command& boundary = sub("boundary", "find the closest decision boundary point");
  boundary.key("model", "model file");
  boundary.key("input", "input tensor file");
  add_attack_keys(boundary);

  Command& evaluate = sub("evaluate", "score attribution maps against bounding boxes");
  evaluate.key("attributions", "directory of .bdt maps named by instance id");
  evaluate.key("boxes", "CSV id,x_min,y_min,x_max,y_max");

  Command& render = sub("render", "render an attribution map as a PPM heatmap");
  render.key("attribution", "attribution tensor file");
  render.key("blur", "Gaussian blur sigma in pixels or auto");
  render.key("scale", "integer upscaling factor");

  Command& train = sub("train-toy", "train a small classifier on a synthetic dataset");
  add_train_keys(train);
  train.key("export_data", "true to also write the test split as tensors");
  train.key("n_test", "exported test set size");

  Command& experiment = sub("experiment", "run one experiment into a hashed run directory");
  experiment.key("name", "alignment | localization | correlation | smoothing | baseline-sensitivity");
  add_train_keys(experiment);
  add_attack_keys(experiment);
  experiment.key("n_test", "test set size (seed data_seed + 1)");
  experiment.key("model", "use this model file instead of training, or none");
  experiment.key("methods", "localization methods (comma list)");
  experiment.key("sigmas", "smoothing noise levels (comma list)");
  experiment.key("n_noise", "noise draws per smoothing instance");
  experiment.key("smooth_eps", "smoothing attack radius");
  experiment.key("smooth_iters", "smoothing attack iterations");
  experiment.key("steps", "IG/BIG trapezoid nodes");
  experiment.key("sg_sigma", "SmoothGrad noise level");
  experiment.key("sg_samples", "SmoothGrad samples");
  experiment.key("agi_eps", "AGI l-inf radius");
  experiment.key("agi_topk", "AGI target classes (capped below the class count)");
  experiment.key("agi_iters", "AGI iterations per target");
  experiment.key("keep_maps", "instances per method whose maps are saved");
  experiment.key("blur", "heatmap blur sigma or auto");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    for (auto& [name, cmd] : cmds) {
      if (!cmd.app->parsed()) continue;
      KeyValues kv = resolve(cmd, g);
      if (name == "attribute") {
        defaults(kv, {{"method", "sm"}, {"target", "predicted"}, {"steps", "20"}, {"baseline", "0"},
                      {"sg_sigma", "0.5"}, {"sg_samples", "50"}, {"agi_eps", "0.5"}, {"agi_topk", "10"},
                      {"agi_iters", "15"}, {"name", "attribution"}});
        defaults(kv, kAttackDefaults);
        return cmd_attribute(kv, g);
      }
      if (name == "boundary") {
        defaults(kv, kAttackDefaults);
        return cmd_boundary(kv, g);
      }
      if (name == "evaluate") return cmd_evaluate(kv, g);
      if (name == "render") {
        defaults(kv, {{"blur", "auto"}, {"scale", "1"}});
        return cmd_render(kv, g);
      }
      if (name == "train-toy") {
        defaults(kv, {{"dataset", "blobs2d"}, {"n_train", "200"}, {"arch", "mlp16"}, {"robust_eps", "none"},
                      {"export_data", "false"}, {"n_test", "50"}});
        defaults(kv, kTrainDefaults);
        return cmd_train_toy(kv, g);
      }
      return cmd_experiment(kv, g);
    }
  } catch (const std::exception& e) {
    std::cerr << "bdry " << app.get_subcommands().front()->get_name() << ": " << e.what() << "\n";
    return 1;
  }
  return 1;
}
