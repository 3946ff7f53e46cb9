#include "vmoe/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "vmoe/errors.hpp"
#include "vmoe/flops.hpp"

namespace vmoe {

double learning_rate_at(const TrainConfig& cfg, double progress) {
  if (cfg.warmup_epochs > 0 && progress < cfg.warmup_epochs) return cfg.learning_rate * progress / cfg.warmup_epochs;
  const double span = std::max(1e-12, static_cast<double>(cfg.epochs - cfg.warmup_epochs));
  const double t = std::clamp((progress - cfg.warmup_epochs) / span, 0.0, 1.0);
  return cfg.min_learning_rate + 0.5 * (cfg.learning_rate - cfg.min_learning_rate) * (1 + std::cos(std::numbers::pi * t));
}

namespace {

bool decays(const std::string& name) { return name.ends_with(".weight"); }

template <typename Fn>
void for_each_indexed(ModelParams<float>& p, Fn fn) {
  std::size_t i = 0;
  for_each_parameter(p, [&](const std::string& name, Tensorf& t) { fn(i++, name, t); });
}

}  // namespace

Optimizer::Optimizer(const TrainConfig& cfg, ModelParams<float>& params) : cfg_(cfg) {
  for_each_parameter(params, [&](const std::string&, Tensorf& t) {
    first_.push_back(Eigen::VectorXf::Zero(t.size()));
    if (cfg_.optimizer == OptimizerKind::kAdamW) second_.push_back(Eigen::VectorXf::Zero(t.size()));
  });
}

void Optimizer::step(ModelParams<float>& params, double learning_rate) {
  ++steps_;
  const auto lr = static_cast<float>(learning_rate);
  const auto wd = static_cast<float>(cfg_.weight_decay);
  constexpr float kBeta1 = 0.9f, kBeta2 = 0.999f, kEps = 1e-8f;
  const float c1 = 1.0f - std::pow(kBeta1, static_cast<float>(steps_));
  const float c2 = 1.0f - std::pow(kBeta2, static_cast<float>(steps_));
  for_each_indexed(params, [&](std::size_t i, const std::string& name, Tensorf& t) {
    if (!t.has_grad()) return;
    auto& w = t.mutable_value();
    const auto& g = t.grad();
    if (decays(name) && wd > 0) w *= 1.0f - lr * wd;
    if (cfg_.optimizer == OptimizerKind::kAdamW) {
      first_[i] = kBeta1 * first_[i] + (1 - kBeta1) * g;
      second_[i] = kBeta2 * second_[i] + (1 - kBeta2) * g.cwiseProduct(g);
      w.array() -= lr * (first_[i].array() / c1) / ((second_[i].array() / c2).sqrt() + kEps);
    } else {
      first_[i] = static_cast<float>(cfg_.momentum) * first_[i] + g;
      w -= lr * first_[i];
    }
  });
}

std::vector<NamedArray> Optimizer::state(ModelParams<float>& params) const {
  std::vector<NamedArray> out;
  for_each_indexed(params, [&](std::size_t i, const std::string& name, Tensorf& t) {
    out.push_back({"m/" + name, t.shape(), {first_[i].data(), first_[i].data() + first_[i].size()}});
    if (!second_.empty()) out.push_back({"v/" + name, t.shape(), {second_[i].data(), second_[i].data() + second_[i].size()}});
  });
  return out;
}

void Optimizer::load_state(ModelParams<float>& params, long long steps, const std::vector<NamedArray>& state) {
  std::size_t j = 0;
  auto take = [&](const std::string& name, const Tensorf& t, Eigen::VectorXf& into) {
    if (j >= state.size() || state[j].name != name || state[j].shape != t.shape()) {
      throw FormatError("optimizer state does not match the model at " + name);
    }
    into = Eigen::Map<const Eigen::VectorXf>(state[j].values.data(), static_cast<Eigen::Index>(state[j].values.size()));
    ++j;
  };
  for_each_indexed(params, [&](std::size_t i, const std::string& name, Tensorf& t) {
    take("m/" + name, t, first_[i]);
    if (!second_.empty()) take("v/" + name, t, second_[i]);
  });
  if (j != state.size()) throw FormatError("optimizer state holds extra arrays");
  steps_ = steps;
}

std::string format_metrics_row(const EpochRecord& r) {
  char buf[256];
  char router[32] = "NA";
  if (r.val.router_acc) std::snprintf(router, sizeof router, "%.6f", *r.val.router_acc);
  std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%.6f,%.6f,%s,%.4f", r.epoch, r.loss, r.class_loss, r.router_loss,
                r.val.top1, router, r.val.experts_per_image);
  return buf;
}

namespace {

Dataset fit_images(const Dataset& d, const ModelConfig& cfg) {
  if (d.image_size == cfg.vit.image_size) return d;
  if (d.image_size > cfg.vit.image_size) {
    throw ConfigError("dataset images are " + std::to_string(d.image_size) + "px, larger than model.image_size " +
                      std::to_string(cfg.vit.image_size));
  }
  return upsample_nearest(d, cfg.vit.image_size);
}

void check_dataset(const Dataset& d, const ModelConfig& cfg, const char* what) {
  validate(d);
  if (d.size() == 0) throw DataError(std::string(what) + " split is empty");
  if (d.num_classes != cfg.vit.num_classes) {
    throw ConfigError(std::string(what) + " split has " + std::to_string(d.num_classes) +
                      " classes but model.num_classes is " + std::to_string(cfg.vit.num_classes));
  }
}

bool uses_superclass_loss(const ModelConfig& cfg) {
  return cfg.moe && cfg.moe->routing == RoutingMode::kPerImageSuperclass;
}

void check_map(const SuperClassMap& map, const ModelConfig& cfg) {
  validate(map);
  if (map.num_classes() != cfg.vit.num_classes || map.num_superclasses != cfg.moe->num_experts) {
    throw ConfigError("super-class map covers " + std::to_string(map.num_classes()) + " classes in " +
                      std::to_string(map.num_superclasses) + " groups; the model needs " +
                      std::to_string(cfg.vit.num_classes) + " classes in E=" + std::to_string(cfg.moe->num_experts));
  }
}

int argmax(const Vector<float>& v) {
  Eigen::Index i = 0;
  v.maxCoeff(&i);
  return static_cast<int>(i);
}

}  // namespace

Metrics evaluate(ModelParams<float>& params, const ModelConfig& cfg, const Dataset& data,
                 const SuperClassMap* superclasses) {
  const Dataset d = fit_images(data, cfg);
  NoGradGuard no_grad;
  Metrics m;
  long long correct = 0, router_correct = 0, experts = 0;
  double loss = 0;
  const bool router_metric = superclasses && cfg.moe && is_per_image(cfg.moe->routing);
  if (router_metric) check_map(*superclasses, cfg);
  for (std::size_t i = 0; i < d.size(); ++i) {
    auto r = model_forward(to_tensor<float>(d.image(i), d.image_size), params, cfg);
    const int y = d.fine_labels[i];
    if (argmax(r.logits.value()) == y) ++correct;
    const int label[] = {y};
    loss += cross_entropy(r.logits, label).item();
    experts += r.distinct_experts;
    if (router_metric && argmax(r.gating->probs.value()) == (*superclasses)[y]) ++router_correct;
  }
  const double n = static_cast<double>(d.size());
  m.examples = static_cast<long long>(d.size());
  m.top1 = d.size() ? static_cast<double>(correct) / n : 0;
  m.class_loss = d.size() ? loss / n : 0;
  m.experts_per_image = d.size() ? static_cast<double>(experts) / n : 0;
  if (router_metric && d.size()) m.router_acc = static_cast<double>(router_correct) / n;
  return m;
}

std::vector<int> predict(ModelParams<float>& params, const ModelConfig& cfg, const Dataset& data) {
  const Dataset d = fit_images(data, cfg);
  NoGradGuard no_grad;
  std::vector<int> out;
  out.reserve(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    out.push_back(argmax(model_forward(to_tensor<float>(d.image(i), d.image_size), params, cfg).logits.value()));
  }
  return out;
}

ConfusionMatrix compute_confusion(ModelParams<float>& params, const ModelConfig& cfg, const Dataset& data) {
  return confusion_from_predictions(cfg.vit.num_classes, data.fine_labels, predict(params, cfg, data));
}

Checkpoint make_checkpoint(ModelParams<float>& params, const ModelConfig& cfg, int epoch, std::uint64_t seed,
                           const Optimizer* optimizer) {
  Checkpoint ck;
  ck.model = cfg;
  ck.epoch = epoch;
  ck.seed = seed;
  ck.parameters = export_parameters(params);
  if (optimizer) {
    ck.optimizer = std::string(to_string(optimizer->kind()));
    ck.optimizer_step = optimizer->steps();
    ck.optimizer_state = optimizer->state(params);
  }
  return ck;
}

ModelParams<float> restore_params(const Checkpoint& ckpt) {
  ModelParams<float> p = init_model<float>(ckpt.model, 0);
  import_parameters(p, ckpt.parameters);
  return p;
}

TrainResult train(const ModelConfig& model_cfg, const TrainConfig& train_cfg, const LossConfig& loss_cfg,
                  const Dataset& train_data, const Dataset& val_data, const SuperClassMap* superclasses,
                  const TrainOptions& options) {
  validate(model_cfg);
  validate(train_cfg);
  validate(loss_cfg);
  if (uses_superclass_loss(model_cfg)) {
    if (!superclasses) throw ConfigError("routing mode per_image_superclass needs a super-class map");
    check_map(*superclasses, model_cfg);
  }
  check_dataset(train_data, model_cfg, "training");
  check_dataset(val_data, model_cfg, "validation");
  const Dataset train_set = fit_images(train_data, model_cfg);
  const std::optional<MoEConfig>& moe = model_cfg.moe;

  TrainResult result{init_model<float>(model_cfg, train_cfg.seed), {}};
  ModelParams<float>& params = result.params;
  Optimizer opt(train_cfg, params);
  int start_epoch = 0;
  if (options.resume_from) {
    Checkpoint ck = load_checkpoint(*options.resume_from);
    if (config_entries(ck.model) != config_entries(model_cfg)) {
      throw ConfigError("checkpoint " + options.resume_from->string() + " was written for a different model config");
    }
    import_parameters(params, ck.parameters);
    if (!ck.optimizer.empty()) opt.load_state(params, ck.optimizer_step, ck.optimizer_state);
    start_epoch = ck.epoch;
  }

  std::ofstream metrics_log;
  if (options.output_dir) {
    std::filesystem::create_directories(*options.output_dir / "checkpoints");
    const auto path = *options.output_dir / "metrics.csv";
    const bool fresh = start_epoch == 0 || !std::filesystem::exists(path);
    metrics_log.open(path, fresh ? std::ios::trunc : std::ios::app);
    if (!metrics_log) throw TrainingError("cannot write " + path.string());
    if (fresh) metrics_log << kMetricsHeader << '\n' << std::flush;
  }

  const bool learned_image = moe && moe->routing == RoutingMode::kPerImageLearned;
  const float balance_weight = static_cast<float>(loss_cfg.load_balance_weight);
  // Dispatch fractions from earlier batches, for the per-image balance term.
  Vector<float> dispatch;
  if (moe) dispatch = Vector<float>::Constant(moe->num_experts, 1.0f / static_cast<float>(moe->num_experts));

  const auto n = static_cast<int>(train_set.size());
  const int batches = (n + train_cfg.batch_size - 1) / train_cfg.batch_size;
  for (int epoch = start_epoch; epoch < train_cfg.epochs; ++epoch) {
    std::mt19937_64 rng(train_cfg.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(epoch) + 1);
    std::vector<std::size_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double sum_total = 0, sum_class = 0, sum_router = 0;
    for (int b = 0; b < batches; ++b) {
      const int begin = b * train_cfg.batch_size;
      const int end = std::min(n, begin + train_cfg.batch_size);
      const float inv_batch = 1.0f / static_cast<float>(end - begin);
      zero_grad(params);
      Vector<float> batch_dispatch = Vector<float>::Zero(dispatch.size());
      for (int j = begin; j < end; ++j) {
        const std::size_t idx = order[static_cast<std::size_t>(j)];
        const int label = train_set.fine_labels[idx];
        double total_v = NAN, class_v = NAN, router_v = 0;
        try {
          Tensorf x = train_cfg.augment
                          ? to_tensor<float>(augment_image(train_set.image(idx), train_set.image_size, 4, rng),
                                             train_set.image_size)
                          : to_tensor<float>(train_set.image(idx), train_set.image_size);
          auto r = model_forward(x, params, model_cfg);
          std::optional<int> target;
          if (uses_superclass_loss(model_cfg)) target = (*superclasses)[label];
          auto parts = combined_loss(r.logits, label, r.gating ? &*r.gating : nullptr, target, loss_cfg);
          Tensorf total = parts.total;
          if (balance_weight > 0 && moe) {
            if (r.balance_loss.defined()) {
              total = add(total, scale(r.balance_loss, balance_weight));
            } else if (learned_image) {
              Tensorf f({moe->num_experts}, dispatch);
              total = add(total, scale(sum(mul(r.gating->probs, f)), balance_weight * moe->num_experts));
            }
          }
          if (r.gating) {
            for (int e : r.gating->selected) batch_dispatch[e] += 1.0f;
          }
          total_v = total.item();
          class_v = parts.class_loss.item();
          if (parts.router_loss.defined()) router_v = parts.router_loss.item();
          if (!std::isfinite(total_v) || !std::isfinite(class_v) || !std::isfinite(router_v)) throw NumericError("");
          backward(scale(total, inv_batch));
        } catch (const NumericError& e) {
          std::ostringstream os;
          os << "non-finite loss at epoch " << epoch + 1 << ", batch " << b + 1 << " (example " << idx
             << "): loss=" << total_v << " class_loss=" << class_v << " router_loss=" << router_v;
          if (*e.what()) os << " [" << e.what() << "]";
          throw TrainingError(os.str());
        }
        sum_total += total_v;
        sum_class += class_v;
        sum_router += router_v;
      }
      opt.step(params, learning_rate_at(train_cfg, epoch + static_cast<double>(b + 1) / batches));
      if (learned_image && batch_dispatch.sum() > 0) {
        dispatch = 0.9f * dispatch + 0.1f * batch_dispatch / batch_dispatch.sum();
      }
    }
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.loss = sum_total / n;
    rec.class_loss = sum_class / n;
    rec.router_loss = sum_router / n;
    rec.val = evaluate(params, model_cfg, val_data, moe && is_per_image(moe->routing) ? superclasses : nullptr);
    result.history.push_back(rec);
    if (options.output_dir) {
      metrics_log << format_metrics_row(rec) << '\n' << std::flush;
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%03d.ckpt", rec.epoch);
      const auto dir = *options.output_dir / "checkpoints";
      save_checkpoint(make_checkpoint(params, model_cfg, rec.epoch, train_cfg.seed, &opt), dir / name);
      std::filesystem::copy_file(dir / name, dir / "last.ckpt", std::filesystem::copy_options::overwrite_existing);
    }
    if (options.on_epoch) options.on_epoch(rec);
  }
  return result;
}

std::string_view to_string(SuperclassSource s) {
  switch (s) {
    case SuperclassSource::kProvided:
      return "provided";
    case SuperclassSource::kRandom:
      return "random";
    case SuperclassSource::kCluster:
      return "cluster";
    case SuperclassSource::kFile:
      return "file";
  }
  return "unknown";
}

SuperclassSource parse_superclass_source(std::string_view text) {
  for (auto s : {SuperclassSource::kProvided, SuperclassSource::kRandom, SuperclassSource::kCluster,
                 SuperclassSource::kFile}) {
    if (text == to_string(s)) return s;
  }
  throw ConfigError("unknown super-class source '" + std::string(text) + "' (expected provided, random, cluster or file)");
}

SuperClassMap make_superclasses(const SuperclassPlan& plan, const Dataset& train_set, int num_superclasses,
                                const ConfusionMatrix* confusion) {
  SuperClassMap map;
  switch (plan.source) {
    case SuperclassSource::kProvided:
      if (!train_set.has_coarse_labels()) throw ConfigError("superclass.source = provided, but the dataset has no coarse labels");
      map = provided_superclasses(train_set.fine_labels, train_set.coarse_labels);
      break;
    case SuperclassSource::kRandom:
      map = random_superclasses(train_set.num_classes, num_superclasses, plan.seed);
      break;
    case SuperclassSource::kCluster:
      if (!confusion) throw ContractError("cluster super-classes need a confusion matrix");
      map = cluster_graph(build_graph(*confusion), num_superclasses);
      break;
    case SuperclassSource::kFile:
      map = read_superclass_map(plan.file);
      break;
  }
  if (map.num_superclasses != num_superclasses || map.num_classes() != train_set.num_classes) {
    throw ConfigError(std::string(to_string(plan.source)) + " super-classes give " + std::to_string(map.num_classes()) +
                      " classes in " + std::to_string(map.num_superclasses) + " groups; expected " +
                      std::to_string(train_set.num_classes) + " classes in E=" + std::to_string(num_superclasses));
  }
  return map;
}

std::string_view to_string(AblationAxis a) {
  switch (a) {
    case AblationAxis::kExperts:
      return "E";
    case AblationAxis::kLayers:
      return "L";
    case AblationAxis::kTopK:
      return "k";
    case AblationAxis::kRouting:
      return "routing";
  }
  return "unknown";
}

AblationAxis parse_ablation_axis(std::string_view text) {
  for (auto a : {AblationAxis::kExperts, AblationAxis::kLayers, AblationAxis::kTopK, AblationAxis::kRouting}) {
    if (text == to_string(a)) return a;
  }
  throw ConfigError("unknown ablation axis '" + std::string(text) + "' (expected E, L, k or routing)");
}

namespace {

struct RunOutcome {
  Metrics val;
  ModelParams<float> params;
};

RunOutcome run_one(const ModelConfig& cfg, const AblationSetup& s, const SuperClassMap* map, const std::string& name) {
  TrainOptions opts;
  if (s.output_dir) opts.output_dir = *s.output_dir / name;
  TrainResult r = train(cfg, s.train, s.loss, s.train_set, s.val_set, map, opts);
  const SuperClassMap* report_map = cfg.moe && is_per_image(cfg.moe->routing) ? map : nullptr;
  return {evaluate(r.params, cfg, s.val_set, report_map), std::move(r.params)};
}

struct Strategy {
  const char* key;
  const char* label;
  const char* input;
  RoutingMode mode;
  std::optional<SuperclassSource> source;  // override of the setup's plan
};

constexpr Strategy kStrategies[] = {
    {"superclass", "Super-class", "image", RoutingMode::kPerImageSuperclass, std::nullopt},
    {"random", "Rand. class", "image", RoutingMode::kPerImageSuperclass, SuperclassSource::kRandom},
    {"learned_image", "End-to-end", "image", RoutingMode::kPerImageLearned, std::nullopt},
    {"learned_token", "End-to-end", "token", RoutingMode::kPerTokenLearned, std::nullopt},
};

const Strategy& find_strategy(const std::string& key) {
  for (const auto& s : kStrategies)
    if (key == s.key) return s;
  throw ConfigError("unknown routing strategy '" + key + "' (expected superclass, random, learned_image or learned_token)");
}

}  // namespace

AblationTable ablate(AblationAxis axis, const std::vector<std::string>& values, const AblationSetup& setup) {
  if (!setup.base.moe) throw ConfigError("ablation needs an MoE base config");
  if (values.empty()) throw ConfigError("ablation needs at least one value");
  // Parse and validate every value before training anything.
  std::vector<ModelConfig> configs;
  for (const auto& v : values) {
    ModelConfig cfg = setup.base;
    switch (axis) {
      case AblationAxis::kExperts:
        cfg.moe->num_experts = parse_int("E", v);
        break;
      case AblationAxis::kLayers:
        cfg.moe->num_moe_layers = parse_int("L", v);
        break;
      case AblationAxis::kTopK:
        cfg.moe->top_k = parse_int("k", v);
        break;
      case AblationAxis::kRouting:
        cfg.moe->routing = find_strategy(v).mode;
        break;
    }
    validate(cfg);
    configs.push_back(cfg);
  }

  ModelConfig dense_cfg = setup.base;
  dense_cfg.moe.reset();
  RunOutcome dense = run_one(dense_cfg, setup, nullptr, "dense");
  std::optional<ConfusionMatrix> confusion;
  if (setup.superclasses.source == SuperclassSource::kCluster) {
    confusion = compute_confusion(dense.params, dense_cfg, setup.val_set);
  }

  AblationTable table{axis, {}};
  if (axis == AblationAxis::kRouting) {
    table.rows.push_back({"Dense", "N/A", std::nullopt, dense.val.top1, dense.val.top1, estimate(dense_cfg).total, true});
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    const ModelConfig& cfg = configs[i];
    SuperclassPlan plan = setup.superclasses;
    AblationRow row;
    row.value = values[i];
    if (axis == AblationAxis::kRouting) {
      const Strategy& s = find_strategy(values[i]);
      if (s.source) plan.source = *s.source;
      row.value = s.label;
      row.input = s.input;
    }
    std::optional<SuperClassMap> map;
    if (cfg.moe->routing == RoutingMode::kPerImageSuperclass) {
      map = make_superclasses(plan, setup.train_set, cfg.moe->num_experts, confusion ? &*confusion : nullptr);
    }
    const std::string name = std::string(to_string(axis)) + "_" + values[i];
    RunOutcome moe_run = run_one(cfg, setup, map ? &*map : nullptr, name);
    row.moe_top1 = moe_run.val.top1;
    row.router_acc = moe_run.val.router_acc;
    row.flops = estimate(cfg).total;
    row.dense_top1 = dense.val.top1;
    if (axis == AblationAxis::kTopK && cfg.moe->top_k != 1) {
      ModelConfig wide = dense_cfg;
      wide.vit.mlp_ratio = 4 * cfg.moe->top_k;
      row.dense_top1 = run_one(wide, setup, nullptr, "dense_k" + values[i]).val.top1;
    }
    table.rows.push_back(row);
  }
  return table;
}

std::string format_ablation_table(const AblationTable& table) {
  auto pct = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", 100 * v);
    return std::string(buf);
  };
  auto delta = [](double moe, double dense) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%+.2f", 100 * (moe - dense));
    return std::string(buf);
  };
  std::vector<std::vector<std::string>> cells;
  switch (table.axis) {
    case AblationAxis::kExperts:
    case AblationAxis::kLayers:
      cells.push_back({std::string(to_string(table.axis)), "Router", "MoE", "Delta"});
      for (const auto& r : table.rows) {
        cells.push_back({r.value, r.router_acc ? pct(*r.router_acc) : "-", pct(r.moe_top1), delta(r.moe_top1, r.dense_top1)});
      }
      break;
    case AblationAxis::kTopK:
      cells.push_back({"k", "FLOPs", "Dense", "MoE", "Delta"});
      for (const auto& r : table.rows) {
        char flops[32];
        std::snprintf(flops, sizeof flops, "%.2fM", static_cast<double>(r.flops) / 1e6);
        cells.push_back({r.value, flops, pct(r.dense_top1), pct(r.moe_top1), delta(r.moe_top1, r.dense_top1)});
      }
      break;
    case AblationAxis::kRouting:
      cells.push_back({"Routing", "Input", "Acc.", "Delta"});
      for (const auto& r : table.rows) {
        cells.push_back({r.value, r.input, pct(r.moe_top1), r.is_dense ? "" : delta(r.moe_top1, r.dense_top1)});
      }
      break;
  }
  std::vector<std::size_t> width(cells.front().size(), 0);
  for (const auto& row : cells)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  std::ostringstream os;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (std::size_t c = 0; c < cells[r].size(); ++c) {
      const auto& cell = cells[r][c];
      const std::string pad(width[c] - cell.size(), ' ');
      if (c) os << "  ";
      os << (c == 0 ? cell + pad : pad + cell);
    }
    os << '\n';
    if (r == 0) {
      std::size_t total = 0;
      for (auto w : width) total += w;
      os << std::string(total + 2 * (width.size() - 1), '-') << '\n';
    }
  }
  return os.str();
}

}  // namespace vmoe
