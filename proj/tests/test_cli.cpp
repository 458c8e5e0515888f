#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

const char* kSmallConfig = R"(
[simulation]
accounts = 60
seed = 3
[predictor]
max_epochs = 2
hidden_dim = 4
embed_dim = 4
[agent]
total_steps = 200
batch = 8
hidden_dims = 8
epochs = 1
[dnn]
max_epochs = 2
[bench]
train_accounts = 40
eval_accounts = 20
seeds = 1
curve_accounts = 5
)";

struct Workdir {
  fs::path dir;
  Workdir() {
    dir = fs::temp_directory_path() / ("deduct_cli_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Workdir() { fs::remove_all(dir); }
  fs::path write(const std::string& name, const std::string& text) const {
    std::ofstream(dir / name) << text;
    return dir / name;
  }
  std::string path(const std::string& name) const { return (dir / name).string(); }
};

int run(const std::string& args) {
  const std::string cmd = std::string(DEDUCT_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("cli exit codes and artefacts") {
  Workdir w;
  const auto cfg = w.write("small.ini", kSmallConfig).string();
  const auto data = w.path("data.jsonl");

  CHECK(run("") == 2);
  CHECK(run("gen --config " + cfg) == 2);
  CHECK(run("gen --config " + w.path("missing.ini") + " --out " + data) == 2);
  const auto bad = w.write("bad.ini", "[simulation]\nhorizon_days = -3\n").string();
  CHECK(run("gen --config " + bad + " --out " + data) == 2);
  const auto typo = w.write("typo.ini", "[simulation]\naccounts = many\n").string();
  CHECK(run("gen --config " + typo + " --out " + data) == 2);

  REQUIRE(run("gen --config " + cfg + " --out " + data) == 0);
  const std::string first = slurp(data);
  CHECK(!first.empty());
  REQUIRE(run("gen --config " + cfg + " --out " + data) == 0);
  CHECK(slurp(data) == first);

  const auto junk = w.write("junk.jsonl", "{\"id\": 1, \"profile\": \n").string();
  CHECK(run("train-predictor --config " + cfg + " --data " + junk + " --out " + w.path("p.ckpt")) == 4);

  const auto pred = w.path("p.ckpt");
  REQUIRE(run("train-predictor --config " + cfg + " --data " + data + " --out " + pred) == 0);
  CHECK(fs::exists(pred));
  CHECK(run("train-agent --config " + cfg + " --data " + data + " --policy dqn-a2ce --out " +
            w.path("a.ckpt")) == 2);
  CHECK(run("train-agent --config " + cfg + " --data " + data + " --policy random --out " +
            w.path("a.ckpt")) == 2);
  const auto corrupt = w.write("corrupt.ckpt", "not a checkpoint\n").string();
  CHECK(run("train-agent --config " + cfg + " --data " + data + " --predictor " + corrupt +
            " --policy dqn-a2ce --out " + w.path("a.ckpt")) == 4);

  fs::create_directories(w.dir / "agents");
  REQUIRE(run("train-agent --config " + cfg + " --data " + data + " --predictor " + pred +
              " --policy dqn-a2ce --out " + w.path("agents/dqn-a2ce.ckpt")) == 0);
  CHECK(fs::exists(w.path("agents/dqn-a2ce.ckpt.curve.csv")));
  REQUIRE(run("eval --config " + cfg + " --data " + data + " --agents " + w.path("agents") +
              " --out " + w.path("report.csv")) == 0);
  const auto report = slurp(w.path("report.csv"));
  CHECK(report.find("dqn-a2ce,") != std::string::npos);
  CHECK(report.find("heuristic,") != std::string::npos);
  CHECK(fs::exists(w.path("report.episodes.csv")));
  CHECK(fs::exists(w.path("report.attempts.csv")));
}
