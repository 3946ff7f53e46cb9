#include "commands.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "run_config.hpp"
#include "vmoe/errors.hpp"
#include "vmoe/flops.hpp"
#include "vmoe/log.hpp"

namespace vmoe::cli {
namespace {

namespace fs = std::filesystem;

struct Common {
  std::string config;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c, bool config_required = true) {
  auto* opt = cmd->add_option("-c,--config", c.config, "run file");
  if (config_required) opt->required();
  opt->check(CLI::ExistingFile);
  cmd->add_option("--set", c.overrides, "override, e.g. --set moe.k=2 (repeatable)")->allow_extra_args(false);
}

RunConfig resolve(const Common& c, std::ostream& out) {
  RunConfig cfg = load_run_config(c.config, c.overrides);
  for (const auto& o : c.overrides) out << "override " << o << '\n';
  validate(cfg);
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

// Label names shipped next to the CIFAR binaries, if present.
std::vector<std::string> class_names(const RunConfig& cfg) {
  std::vector<std::string> names;
  for (const char* file : {"fine_label_names.txt", "batches.meta.txt"}) {
    std::ifstream in(cfg.data.dir / file);
    for (std::string line; in && std::getline(in, line);) {
      if (!line.empty()) names.push_back(line);
    }
    if (!names.empty()) break;
  }
  if (static_cast<int>(names.size()) != cfg.model.vit.num_classes) names.clear();
  return names;
}

bool needs_map(const ModelConfig& m) { return m.moe && m.moe->routing == RoutingMode::kPerImageSuperclass; }

std::optional<SuperClassMap> superclasses_for(const RunConfig& cfg, const ModelConfig& model, const Dataset& train_set) {
  if (!needs_map(model)) return std::nullopt;
  if (cfg.superclass.source == SuperclassSource::kCluster) {
    throw ConfigError(
        "superclass.source = cluster needs a trained dense model: run `vmoe cluster` and set superclass.source = file");
  }
  return make_superclasses(cfg.superclass, train_set, model.moe->num_experts);
}

void print_metrics(std::ostream& out, const Metrics& m) {
  out << std::fixed << std::setprecision(6);
  out << "examples " << m.examples << '\n';
  out << "top1 " << m.top1 << '\n';
  out << "router_acc ";
  if (m.router_acc) {
    out << *m.router_acc << '\n';
  } else {
    out << "NA\n";
  }
  out << "experts_per_image " << m.experts_per_image << '\n';
  out << "class_loss " << m.class_loss << '\n';
  out << std::defaultfloat;
}

int cmd_train(const Common& c, const std::string& resume, std::ostream& out) {
  RunConfig cfg = resolve(c, out);
  auto [train_set, val_set] = load_datasets(cfg);
  auto map = superclasses_for(cfg, cfg.model, train_set);
  const fs::path root = output_root(cfg);
  fs::create_directories(root);
  write_text(root / "resolved.cfg", format_run_config(cfg));
  if (map) write_superclass_map(*map, root / "superclasses.txt");
  out << "training on " << train_set.size() << " images, validating on " << val_set.size() << '\n';
  TrainOptions opts;
  opts.output_dir = root;
  if (!resume.empty()) opts.resume_from = resume;
  opts.on_epoch = [&out](const EpochRecord& r) { out << format_metrics_row(r) << '\n' << std::flush; };
  out << kMetricsHeader << '\n';
  auto result = train(cfg.model, cfg.train, cfg.loss, train_set, val_set, map ? &*map : nullptr, opts);
  out << "wrote " << (root / "metrics.csv").string() << " and " << (root / "checkpoints").string() << '\n';
  return kExitOk;
}

int cmd_evaluate(const Common& c, const std::string& checkpoint, const std::string& split, std::ostream& out) {
  RunConfig cfg = resolve(c, out);
  Checkpoint ck = load_checkpoint(checkpoint);
  // The checkpoint defines the model; the run file supplies data and maps.
  cfg.model = ck.model;
  validate(cfg);
  auto params = restore_params(ck);
  Dataset data = load_eval_split(cfg, split);
  std::optional<SuperClassMap> map;
  if (needs_map(ck.model)) map = superclasses_for(cfg, ck.model, load_datasets(cfg).first);
  out << "checkpoint " << checkpoint << " (epoch " << ck.epoch << "), split " << split << '\n';
  print_metrics(out, evaluate(params, ck.model, data, map ? &*map : nullptr));
  return kExitOk;
}

std::string format_breakdown(const FlopsReport& r) {
  const std::pair<const char*, std::int64_t> lines[] = {
      {"patch_embed", r.patch_embed},        {"attention_proj", r.attention_proj}, {"attention_matmul", r.attention_matmul},
      {"mlp_dense_layers", r.mlp_dense_layers}, {"mlp_moe_layers", r.mlp_moe_layers}, {"router", r.router},
      {"head", r.head},                      {"total", r.total}};
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  for (const auto& [name, v] : lines) {
    os << std::left << std::setw(18) << name << std::right << std::setw(14) << static_cast<double>(v) / 1e6 << "M  "
       << v << '\n';
  }
  return os.str();
}

ViTConfig parse_grid_label(const std::string& label) {
  const auto x = label.find('x');
  if (x == std::string::npos) throw ConfigError("--model expects <layers>x<width>, got '" + label + "'");
  return grid_config(parse_int("--model layers", label.substr(0, x)), parse_int("--model width", label.substr(x + 1)));
}

int cmd_flops(const Common& c, bool grid, bool csv, const std::string& model, std::ostream& out) {
  std::vector<FlopsRow> rows;
  if (grid) {
    rows = dense_grid_flops();
  } else if (!model.empty()) {
    ViTConfig vit = parse_grid_label(model);
    validate(vit);
    rows.push_back({model, estimate(vit)});
  } else if (!c.config.empty()) {
    RunConfig cfg = load_run_config(c.config, c.overrides);
    validate(cfg.model);
    const auto& v = cfg.model.vit;
    std::string label = std::to_string(v.num_layers) + "x" + std::to_string(v.hidden_dim);
    if (cfg.model.moe) {
      label += " E=" + std::to_string(cfg.model.moe->num_experts) + " k=" + std::to_string(cfg.model.moe->top_k) +
               " L=" + std::to_string(cfg.model.moe->num_moe_layers);
    }
    rows.push_back({label, estimate(cfg.model)});
  } else {
    throw ConfigError("flops needs --grid, --model or --config");
  }
  if (csv) {
    out << format_csv(rows);
  } else if (rows.size() == 1) {
    out << rows.front().label << '\n' << format_breakdown(rows.front().report);
  } else {
    out << format_table(rows);
  }
  return kExitOk;
}

int cmd_cluster(const Common& c, const std::string& checkpoint, int experts, int cap, const std::string& split,
                const std::string& out_path, std::ostream& out) {
  RunConfig cfg = resolve(c, out);
  Checkpoint ck = load_checkpoint(checkpoint);
  if (ck.model.is_moe()) throw ConfigError("cluster needs a dense checkpoint; " + checkpoint + " holds an MoE");
  if (experts < 1 || experts > ck.model.vit.num_classes) {
    throw ConfigError("--experts must lie in [1, " + std::to_string(ck.model.vit.num_classes) + "]");
  }
  cfg.model = ck.model;
  auto params = restore_params(ck);
  Dataset data = load_eval_split(cfg, split);
  ConfusionMatrix cm = compute_confusion(params, ck.model, data);
  ClusterOptions opts;
  opts.max_cluster_size = cap;
  SuperClassMap map = cluster_graph(build_graph(cm), experts, opts);
  write_superclass_map(map, out_path);
  const auto names = class_names(cfg);
  const std::string summary = describe(map, names);
  write_text(fs::path(out_path).concat(".summary.txt"), summary);
  out << summary << "wrote " << out_path << '\n';
  return kExitOk;
}

std::vector<std::string> split_values(const std::string& text) {
  std::vector<std::string> v;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) v.push_back(item);
  }
  if (v.empty()) throw ConfigError("--values is empty");
  return v;
}

int cmd_ablate(const Common& c, const std::string& axis_text, const std::string& values, std::ostream& out) {
  RunConfig cfg = resolve(c, out);
  const AblationAxis axis = parse_ablation_axis(axis_text);
  if (!cfg.model.moe) throw ConfigError("ablate needs an MoE base config (set moe.* keys)");
  auto [train_set, val_set] = load_datasets(cfg);
  const fs::path root = output_root(cfg);
  fs::create_directories(root);
  write_text(root / "resolved.cfg", format_run_config(cfg));
  AblationSetup setup{cfg.model, cfg.train, cfg.loss, cfg.superclass, std::move(train_set), std::move(val_set),
                      root / ("ablate_" + std::string(to_string(axis)))};
  const auto table = ablate(axis, split_values(values), setup);
  const std::string text = format_ablation_table(table);
  const fs::path table_path = root / "tables" / ("ablate_" + std::string(to_string(axis)) + ".txt");
  write_text(table_path, text);
  out << text << "wrote " << table_path.string() << '\n';
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Mobile V-MoE: train, evaluate, count FLOPs, derive super-classes, ablate"};
  app.require_subcommand(1);

  Common train_c, eval_c, flops_c, cluster_c, ablate_c;
  std::string resume, checkpoint, split = "val", out_path, axis, values, model;
  bool grid = false, csv = false;
  int experts = 0, cap = 0;

  auto* train_cmd = app.add_subcommand("train", "train a dense ViT or Mobile V-MoE");
  add_common(train_cmd, train_c);
  train_cmd->add_option("--resume", resume, "continue from a checkpoint")->check(CLI::ExistingFile);

  auto* eval_cmd = app.add_subcommand("evaluate", "score a checkpoint");
  add_common(eval_cmd, eval_c);
  eval_cmd->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--split", split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));

  auto* flops_cmd = app.add_subcommand("flops", "analytical FLOPs per image");
  add_common(flops_cmd, flops_c, false);
  flops_cmd->add_flag("--grid", grid, "the twelve dense grid models");
  flops_cmd->add_option("--model", model, "one grid model, e.g. 6x64");
  flops_cmd->add_flag("--csv", csv, "exact counts as CSV");

  auto* cluster_cmd = app.add_subcommand("cluster", "super-classes from a dense model's confusions");
  add_common(cluster_cmd, cluster_c);
  cluster_cmd->add_option("--checkpoint", checkpoint, "dense checkpoint")->required()->check(CLI::ExistingFile);
  cluster_cmd->add_option("-E,--experts", experts, "number of super-classes")->required();
  cluster_cmd->add_option("--cap", cap, "largest super-class (0: 2*ceil(C/E))");
  cluster_cmd->add_option("--split", split, "held-out split to score")->check(CLI::IsMember({"val", "test"}));
  cluster_cmd->add_option("-o,--out", out_path, "map file to write")->required();

  auto* ablate_cmd = app.add_subcommand("ablate", "sweep one MoE setting against dense baselines");
  add_common(ablate_cmd, ablate_c);
  ablate_cmd->add_option("--axis", axis, "E, L, k or routing")->required();
  ablate_cmd->add_option("--values", values, "comma-separated, e.g. 1,2")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitInvalid;
  }

  try {
    if (*train_cmd) return cmd_train(train_c, resume, out);
    if (*eval_cmd) return cmd_evaluate(eval_c, checkpoint, split, out);
    if (*flops_cmd) return cmd_flops(flops_c, grid, csv, model, out);
    if (*cluster_cmd) return cmd_cluster(cluster_c, checkpoint, experts, cap, split, out_path, out);
    if (*ablate_cmd) return cmd_ablate(ablate_c, axis, values, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const std::exception& e) {
    err << "failed: " << e.what() << '\n';
    return kExitFailed;
  }
  return kExitInvalid;
}

}  // namespace vmoe::cli
