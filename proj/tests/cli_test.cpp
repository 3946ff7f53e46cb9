#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "commands.hpp"
#include "run_config.hpp"
#include "vmoe/errors.hpp"

namespace vmoe::cli {
namespace {

namespace fs = std::filesystem;

constexpr const char* kRunFile = R"(; toy run
[model]
image_size = 16
patch_size = 4
num_layers = 2
hidden_dim = 32
num_heads = 2
num_classes = 4

[moe]
num_experts = 2
k = 1
num_layers = 1

[train]
epochs = 2
batch_size = 16
learning_rate = 0.002
weight_decay = 0.01
seed = 3

[data]
source = synthetic
classes = 4
superclasses = 2
images_per_class = 12
val_fraction = 0.25

[superclass]
source = provided

[output]
dir = run
)";

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Outcome {
  int code;
  std::string out, err;
};

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / "vmoe_cli_test" /
           ::testing::UnitTest::GetInstance()->current_test_info()->name();
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    setenv("VMOE_OUTPUT_ROOT", (dir_ / "out").c_str(), 1);
    config_ = write("run.cfg", kRunFile);
  }
  void TearDown() override { unsetenv("VMOE_OUTPUT_ROOT"); }

  fs::path write(const std::string& name, const std::string& text) {
    std::ofstream(dir_ / name) << text;
    return dir_ / name;
  }

  Outcome vmoe(std::vector<std::string> args) {
    args.insert(args.begin(), "vmoe");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
  }

  fs::path out(const std::string& run = "run") const { return dir_ / "out" / run; }

  fs::path dir_, config_;
};

std::map<std::string, long long> csv_totals(const std::string& csv) {
  std::map<std::string, long long> totals;
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    totals[line.substr(0, line.find(','))] = std::stoll(line.substr(line.rfind(',') + 1));
  }
  return totals;
}

// ---- run files --------------------------------------------------------------

TEST(RunFile, ParsesSectionsAndAppliesOverridesLast) {
  auto cfg = parse_run_config(kRunFile, "/base", {"moe.k=2", "train.epochs=7"});
  EXPECT_EQ(cfg.model.vit.hidden_dim, 32);
  ASSERT_TRUE(cfg.model.moe.has_value());
  EXPECT_EQ(cfg.model.moe->top_k, 2);
  EXPECT_EQ(cfg.train.epochs, 7);
  EXPECT_EQ(cfg.data.synthetic.images_per_class, 12);
  EXPECT_EQ(cfg.output_dir, fs::path("run"));
}

TEST(RunFile, RelativeInputPathsFollowTheFile) {
  auto cfg = parse_run_config("[superclass]\nsource = file\nfile = maps/a.txt\n", "/base");
  EXPECT_EQ(cfg.superclass.file, fs::path("/base/maps/a.txt"));
}

TEST(RunFile, UnknownKeysAndBadValuesAreRejected) {
  EXPECT_THROW(parse_run_config("[model]\ndepth = 3\n", ""), ConfigError);
  EXPECT_THROW(parse_run_config("[gpu]\ncount = 3\n", ""), ConfigError);
  EXPECT_THROW(parse_run_config("[model]\nhidden_dim = wide\n", ""), ConfigError);
  EXPECT_THROW(parse_run_config("", "", {"moe.k"}), ConfigError);
  try {
    parse_run_config("[train]\nlearning_rate = fast\n", "");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("train.learning_rate"), std::string::npos) << e.what();
  }
}

TEST(RunFile, ResolvedSnapshotReproducesTheConfig) {
  auto cfg = parse_run_config(kRunFile, "", {"moe.routing=per_token_learned", "loss.lambda=0"});
  const std::string text = format_run_config(cfg);
  EXPECT_EQ(format_run_config(parse_run_config(text, "")), text);
}

TEST(RunFile, ValidationNamesTheField) {
  auto cfg = parse_run_config(kRunFile, "", {"model.num_classes=5"});
  EXPECT_THROW(validate(cfg), ConfigError);
  cfg = parse_run_config(kRunFile, "", {"superclass.source=file", "superclass.file=/no/such/map.txt"});
  try {
    validate(cfg);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("superclass.file"), std::string::npos) << e.what();
  }
  cfg = parse_run_config(kRunFile, "", {"data.source=cifar100", "data.dir=/no/such/dir"});
  EXPECT_THROW(validate(cfg), ConfigError);
}

// ---- flops --------------------------------------------------------------

TEST_F(Cli, FlopsGridMatchesPublishedTable) {
  auto r = vmoe({"flops", "--grid", "--csv"});
  ASSERT_EQ(r.code, 0) << r.err;
  auto totals = csv_totals(r.out);
  EXPECT_EQ(totals.size(), 12u);
  EXPECT_NEAR(totals.at("12x384") / 1e6, 2297, 0.03 * 2297);
  auto table = vmoe({"flops", "--grid"});
  EXPECT_NE(table.out.find("12x384"), std::string::npos);
}

TEST_F(Cli, FlopsSingleModel) {
  auto r = vmoe({"flops", "--model", "6x64"});
  ASSERT_EQ(r.code, 0) << r.err;
  auto totals = csv_totals(vmoe({"flops", "--model", "6x64", "--csv"}).out);
  EXPECT_NEAR(totals.at("6x64") / 1e6, 54, 0.03 * 54);
  EXPECT_NE(r.out.find("total"), std::string::npos);
  EXPECT_EQ(vmoe({"flops"}).code, kExitInvalid);
  EXPECT_EQ(vmoe({"flops", "--model", "6by64"}).code, kExitInvalid);
}

TEST_F(Cli, DenseAndTopOneMoEDifferOnlyByTheRouter) {
  auto dense = vmoe({"flops", "-c", config_.string(), "--csv", "--set", "moe.enabled=false"});
  auto moe = vmoe({"flops", "-c", config_.string(), "--csv"});
  ASSERT_EQ(dense.code, 0) << dense.err;
  auto fields = [](const std::string& csv) {
    std::istringstream in(csv.substr(csv.find('\n') + 1));
    std::vector<long long> v;
    std::string label, f;
    std::getline(in, label, ',');
    while (std::getline(in, f, ',')) v.push_back(std::stoll(f));
    return v;
  };
  auto d = fields(dense.out), m = fields(moe.out);
  ASSERT_EQ(d.size(), 8u);
  // patch, proj, matmul, mlp_dense, mlp_moe, router, head, total
  EXPECT_EQ(d[0], m[0]);
  EXPECT_EQ(d[1], m[1]);
  EXPECT_EQ(d[2], m[2]);
  EXPECT_EQ(d[3] + d[4], m[3] + m[4]);
  EXPECT_EQ(d[5], 0);
  EXPECT_GT(m[5], 0);
  EXPECT_EQ(d[6], m[6]);
  EXPECT_EQ(m[7] - d[7], m[5]);
}

// ---- train / evaluate -----------------------------------------------------

TEST_F(Cli, TrainWritesTheFixedLayout) {
  auto r = vmoe({"train", "-c", config_.string(), "--set", "moe.k=2"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("override moe.k=2"), std::string::npos);
  EXPECT_TRUE(fs::exists(out() / "metrics.csv"));
  EXPECT_TRUE(fs::exists(out() / "resolved.cfg"));
  EXPECT_TRUE(fs::exists(out() / "checkpoints" / "epoch_002.ckpt"));
  EXPECT_TRUE(fs::exists(out() / "checkpoints" / "last.ckpt"));
  EXPECT_TRUE(fs::exists(out() / "superclasses.txt"));
  auto resolved = load_run_config(out() / "resolved.cfg");
  EXPECT_EQ(resolved.model.moe->top_k, 2);
  EXPECT_EQ(load_checkpoint(out() / "checkpoints" / "last.ckpt").model.moe->top_k, 2);
}

TEST_F(Cli, RerunGivesIdenticalMetrics) {
  ASSERT_EQ(vmoe({"train", "-c", config_.string()}).code, 0);
  ASSERT_EQ(vmoe({"train", "-c", config_.string(), "--set", "output.dir=again"}).code, 0);
  EXPECT_EQ(slurp(out() / "metrics.csv"), slurp(out("again") / "metrics.csv"));
  // The snapshot alone reproduces the run.
  const auto snapshot = out() / "resolved.cfg";
  ASSERT_EQ(vmoe({"train", "-c", snapshot.string(), "--set", "output.dir=replay"}).code, 0);
  EXPECT_EQ(slurp(out() / "metrics.csv"), slurp(out("replay") / "metrics.csv"));
}

TEST_F(Cli, MissingMapFailsBeforeTraining) {
  auto r = vmoe({"train", "-c", config_.string(), "--set", "superclass.source=file"});
  EXPECT_EQ(r.code, kExitInvalid);
  EXPECT_NE(r.err.find("superclass.file"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(out()));
}

TEST_F(Cli, InvalidInputsExitWithOne) {
  EXPECT_EQ(vmoe({}).code, kExitInvalid);
  EXPECT_EQ(vmoe({"train"}).code, kExitInvalid);
  EXPECT_EQ(vmoe({"train", "-c", (dir_ / "absent.cfg").string()}).code, kExitInvalid);
  EXPECT_EQ(vmoe({"train", "-c", config_.string(), "--set", "moe.k=3"}).code, kExitInvalid);
  EXPECT_EQ(vmoe({"train", "-c", config_.string(), "--set", "model.depth=3"}).code, kExitInvalid);
  EXPECT_EQ(vmoe({"--help"}).code, kExitOk);
}

TEST_F(Cli, RuntimeFailuresExitWithTwo) {
  auto bad = write("bad.ckpt", "vmoe-checkpoint 1\nepoch x\n");
  auto r = vmoe({"evaluate", "-c", config_.string(), "--checkpoint", bad.string()});
  EXPECT_EQ(r.code, kExitFailed);
  EXPECT_FALSE(r.err.empty());
}

TEST_F(Cli, EvaluateReproducesTheLoggedValidation) {
  ASSERT_EQ(vmoe({"train", "-c", config_.string()}).code, 0);
  auto r = vmoe({"evaluate", "-c", config_.string(), "--checkpoint", (out() / "checkpoints/last.ckpt").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  // Last metrics row: epoch,loss,class_loss,router_loss,top1,router_acc,...
  auto log = slurp(out() / "metrics.csv");
  log.pop_back();
  std::istringstream row(log.substr(log.rfind('\n') + 1));
  std::vector<std::string> f;
  for (std::string s; std::getline(row, s, ',');) f.push_back(s);
  const double top1 = std::stod(f[4]), router = std::stod(f[5]);
  auto value = [&](const std::string& key) {
    const auto at = r.out.find(key + " ");
    return std::stod(r.out.substr(at + key.size() + 1));
  };
  EXPECT_NEAR(value("top1"), top1, 1e-6);
  EXPECT_NEAR(value("router_acc"), router, 1e-6);
  EXPECT_EQ(value("experts_per_image"), 1.0);
}

// ---- cluster --------------------------------------------------------------

TEST_F(Cli, ClusterRecoversHueFamilies) {
  const std::vector<std::string> dense = {"--set", "moe.enabled=false", "--set", "data.images_per_class=80",
                                          "--set", "data.val_fraction=0.5"};
  std::vector<std::string> args = {"train", "-c", config_.string()};
  args.insert(args.end(), dense.begin(), dense.end());
  ASSERT_EQ(vmoe(args).code, 0);
  const auto map_file = dir_ / "map.txt";
  args = {"cluster", "-c", config_.string(), "--checkpoint", (out() / "checkpoints/last.ckpt").string(),
          "-E", "2", "-o", map_file.string()};
  args.insert(args.end(), dense.begin(), dense.end());
  auto r = vmoe(args);
  ASSERT_EQ(r.code, 0) << r.err;
  auto map = read_superclass_map(map_file);
  EXPECT_EQ(map.assignment, (std::vector<int>{0, 0, 1, 1})) << r.out;
  EXPECT_TRUE(fs::exists(fs::path(map_file).concat(".summary.txt")));
  EXPECT_NE(r.out.find("0: 0 1"), std::string::npos) << r.out;

  // The written map drives a super-class run.
  auto moe = vmoe({"train", "-c", config_.string(), "--set", "superclass.source=file", "--set",
                   "superclass.file=" + map_file.string(), "--set", "output.dir=from_map"});
  EXPECT_EQ(moe.code, 0) << moe.err;

  args[6] = "5";
  EXPECT_EQ(vmoe(args).code, kExitInvalid);
}

// ---- ablate -------------------------------------------------------------

int table_rows(const std::string& text) {
  // Header and dash rule, then one line per row.
  return static_cast<int>(std::count(text.begin(), text.end(), '\n')) - 2;
}

TEST_F(Cli, AblateTopKWritesTwoRowTable) {
  auto r = vmoe({"ablate", "-c", config_.string(), "--axis", "k", "--values", "1,2", "--set", "train.epochs=1"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto table = slurp(out() / "tables" / "ablate_k.txt");
  EXPECT_EQ(table_rows(table), 2);
  EXPECT_NE(table.find("Delta"), std::string::npos);
}

TEST_F(Cli, AblateRoutingRunsEveryStrategy) {
  auto r = vmoe({"ablate", "-c", config_.string(), "--axis", "routing", "--values",
                 "superclass,random,learned_image,learned_token", "--set", "train.epochs=1"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto table = slurp(out() / "tables" / "ablate_routing.txt");
  EXPECT_EQ(table_rows(table), 5);
  for (const char* label : {"Dense", "Super-class", "Rand. class", "End-to-end"}) {
    EXPECT_NE(table.find(label), std::string::npos) << label;
  }
}

TEST_F(Cli, AblateSingleValue) {
  auto r = vmoe({"ablate", "-c", config_.string(), "--axis", "E", "--values", "2", "--set", "train.epochs=1"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(table_rows(slurp(out() / "tables" / "ablate_E.txt")), 1);
  EXPECT_EQ(vmoe({"ablate", "-c", config_.string(), "--axis", "depth", "--values", "2"}).code, kExitInvalid);
}

}  // namespace
}  // namespace vmoe::cli
