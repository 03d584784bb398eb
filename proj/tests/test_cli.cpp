#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "clampcal/calibrate.hpp"
#include "clampcal/cli.hpp"
#include "clampcal/diagram.hpp"
#include "clampcal/metrics.hpp"
#include "support.hpp"

using namespace clampcal;
using json = nlohmann::json;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "clampcal");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempDir {
  TempDir() : path(std::filesystem::temp_directory_path() / "clampcal_cli_test") {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name, const std::string& text = "") const {
    auto p = path / name;
    if (!text.empty()) std::ofstream(p) << text;
    return p.string();
  }
  std::filesystem::path path;
};

const std::string kFour = testing::fixture("four_sample_logits.csv").string();

}  // namespace

TEST_CASE("metrics verb") {
  auto r = run({"metrics", "--logits", kFour, "--bins", "10"});
  CHECK(r.code == 0);
  auto j = json::parse(r.out);
  CHECK(std::abs(j["ece"].get<double>() - 0.35) <= 1e-12);
  auto ds = load_logits_csv(kFour);
  CHECK(r.out == to_json(compute_report(softmax(ds), ds.labels(), 10)) + "\n");

  auto one = run({"metrics", "--logits", kFour, "--bins", "1"});
  CHECK(std::abs(json::parse(one.out)["ece"].get<double>() - 0.05) <= 1e-12);
}

TEST_CASE("diagram verb writes JSON or byte-stable SVG") {
  TempDir tmp;
  auto svg = tmp.file("r.svg");
  REQUIRE(run({"diagram", "--logits", kFour, "--bins", "10", "--out", svg}).code == 0);
  auto first = slurp(svg);
  CHECK(first.find("<svg") != std::string::npos);
  CHECK(first.find("ECE = 0.3500") != std::string::npos);
  REQUIRE(run({"diagram", "--logits", kFour, "--bins", "10", "--out", svg}).code == 0);
  CHECK(slurp(svg) == first);

  auto ds = load_logits_csv(kFour);
  auto d = build_diagram(softmax(ds), ds.labels(), 10);
  CHECK(first == render_svg(d, 640, 480, {}));

  auto r = run({"diagram", "--logits", kFour, "--bins", "10"});
  CHECK(r.code == 0);
  CHECK(r.out == to_json(d) + "\n");

  auto mean = tmp.file("m.svg");
  REQUIRE(run({"diagram", "--logits", kFour, "--bins", "10", "--expected", "mean", "--out", mean}).code == 0);
  CHECK(slurp(mean) != first);
  CHECK(run({"diagram", "--logits", kFour, "--expected", "median"}).code == 1);
}

TEST_CASE("fit verbs") {
  TempDir tmp;
  auto model = tmp.file("m.json",
                        R"({"input_dim":2,"output_dim":2,"layers":[{"weights":[[1,0],[0,1]],"bias":[0,0],"activation":"identity"}]})");
  auto inputs = tmp.file("x.csv", "x_0,x_1,label\n1,0,0\n0,1,1\n2,1,1\n");
  auto r = run({"fit-clamping", "--model", model, "--inputs", inputs, "--steps", "0"});
  REQUIRE(r.code == 0);
  auto j = json::parse(r.out);
  CHECK(j["calibrator"]["kind"] == "neural_clamping");
  CHECK(j["calibrator"]["T"].get<double>() == 1.0);
  CHECK(j["calibrator"]["delta"] == json::array({0.0, 0.0}));

  // the CLI output is the library serialization
  TrainConfig config;
  config.steps = 25;
  config.seed = 9;
  auto lib = to_json(fit_neural_clamping(load_model_json(model), load_features_csv(inputs), config));
  auto cli = run({"fit-clamping", "--model", model, "--inputs", inputs, "--steps", "25", "--seed", "9"});
  CHECK(cli.out == lib + "\n");
  CHECK(run({"fit-clamping", "--model", model, "--inputs", inputs, "--steps", "25", "--seed", "9"}).out == cli.out);

  auto three = tmp.file("t.csv", "logit_0,logit_1,label\n2,0,0\n2,0,0\n2,0,1\n");
  auto cal = tmp.file("cal.json");
  auto ts = run({"fit-temperature", "--logits", three, "--calibrator-out", cal});
  REQUIRE(ts.code == 0);
  double t = json::parse(ts.out)["calibrator"]["T"].get<double>();
  CHECK(std::abs(t - 2.0 / std::log(2.0)) < 1e-3);
  CHECK(json::parse(slurp(cal))["T"].get<double>() == t);

  // the written calibrator feeds back into metrics
  auto m = run({"metrics", "--logits", three, "--calibrator", cal});
  CHECK(m.code == 0);
  auto ds = load_logits_csv(three);
  CHECK(m.out == to_json(compute_report(apply(Calibrator::scaling(t), ds), ds.labels())) + "\n");

  auto split = run({"fit-temperature", "--logits", kFour, "--calib-fraction", "0.5", "--seed", "3"});
  CHECK(split.code == 0);
  CHECK(split.out == run({"fit-temperature", "--logits", kFour, "--calib-fraction", "0.5", "--seed", "3"}).out);
}

TEST_CASE("apply verb") {
  auto r = run({"apply", "--logits", kFour});
  REQUIRE(r.code == 0);
  auto j = json::parse(r.out);
  CHECK(j["predicted_class"] == json::array({1, 1, 0, 1}));
  auto p = softmax(load_logits_csv(kFour));
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(j["probabilities"][i][0].get<double>() == p(i, 0));
    CHECK(j["probabilities"][i][1].get<double>() == p(i, 1));
  }
}

TEST_CASE("out flag writes the same JSON to a file") {
  TempDir tmp;
  auto path = tmp.file("metrics.json");
  auto r = run({"metrics", "--logits", kFour, "--bins", "10", "--out", path});
  CHECK(r.code == 0);
  CHECK(r.out.empty());
  CHECK(slurp(path) == run({"metrics", "--logits", kFour, "--bins", "10"}).out);
}

TEST_CASE("exit codes") {
  CHECK(run({}).code == 1);
  CHECK(run({"bogus"}).code == 1);
  CHECK(run({"metrics", "--logits", kFour, "--frobnicate"}).code == 1);
  CHECK(run({"metrics"}).code == 1);
  CHECK(run({"metrics", "--logits", kFour, "--bins", "many"}).code == 1);

  auto help = run({"metrics", "--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("--bins") != std::string::npos);
  CHECK(run({"--help"}).code == 0);

  TempDir tmp;
  auto bad = tmp.file("bad.csv", "logit_0,logit_1,label\n0,1,7\n");
  auto r = run({"metrics", "--logits", bad});
  CHECK(r.code == 2);
  CHECK(r.err.find("out of range") != std::string::npos);
  CHECK(r.err.find('\n') == r.err.size() - 1);
  CHECK(run({"metrics", "--logits", tmp.file("missing.csv")}).code == 2);
  CHECK(run({"metrics", "--logits", kFour, "--bins", "0"}).code == 2);
  CHECK(run({"fit-temperature", "--logits", kFour, "--T-init", "50"}).code == 2);
}
