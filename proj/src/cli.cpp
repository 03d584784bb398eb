#include "clampcal/cli.hpp"

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "clampcal/calibrate.hpp"
#include "clampcal/dataset.hpp"
#include "clampcal/diagram.hpp"
#include "clampcal/error.hpp"
#include "clampcal/metrics.hpp"
#include "clampcal/model.hpp"
#include "clampcal/service.hpp"

namespace clampcal {
namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataFlags {
  std::string logits;
  std::string model;
  std::string inputs;
  std::string calibrator;

  void add_to(CLI::App* app, bool with_calibrator) {
    app->add_option("--logits", logits, "Logits CSV (logit_0,...,label)");
    app->add_option("--model", model, "Model JSON");
    app->add_option("--inputs", inputs, "Features CSV (x_0,...,label)");
    if (with_calibrator) app->add_option("--calibrator", calibrator, "Calibrator JSON file");
  }
};

struct ConfigFlags {
  TrainConfig config;
  std::string loss = "cross_entropy";
  double gamma = 0.0;
  std::optional<double> calib_fraction;

  void add_to(CLI::App* app) {
    app->add_option("--loss", loss, "cross_entropy or focal")
        ->check(CLI::IsMember({"cross_entropy", "focal"}));
    app->add_option("--gamma", gamma, "Focal loss exponent");
    app->add_option("--steps", config.steps, "Gradient steps (clamping fits)");
    app->add_option("--lr-delta", config.lr_delta, "Step size for the input perturbation");
    app->add_option("--lr-T", config.lr_temperature, "Step size for the temperature");
    app->add_option("--T-init", config.initial_temperature, "Initial temperature");
    app->add_option("--T-min", config.min_temperature, "Lower temperature bound");
    app->add_option("--T-max", config.max_temperature, "Upper temperature bound");
    app->add_option("--seed", config.seed, "Seed for the calibration split");
    app->add_option("--calib-fraction", calib_fraction,
                    "Fit on a seeded calibration split of this fraction");
  }

  TrainConfig resolve() const {
    TrainConfig c = config;
    c.loss = loss == "focal" ? Loss::focal(gamma) : Loss::cross_entropy();
    c.validate();
    return c;
  }
};

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw NotFoundError("cannot write file '" + path + "'");
  out << text;
}

void emit(std::ostream& out, const std::string& path, const std::string& text) {
  if (path.empty()) {
    out << text << '\n';
  } else {
    write_text(path, text.ends_with('\n') ? text : text + '\n');
  }
}

// Probabilities and labels for the data flags, after calibration.
struct Evaluated {
  ProbMatrix probs;
  std::vector<int> labels;
};

Evaluated evaluate_data(const DataFlags& flags) {
  Calibrator cal = flags.calibrator.empty() ? Calibrator::identity()
                                            : parse_calibrator_json(read_text(flags.calibrator));
  if (!flags.logits.empty()) {
    if (!flags.model.empty() || !flags.inputs.empty()) {
      throw UsageError("--logits cannot be combined with --model/--inputs");
    }
    auto ds = load_logits_csv(flags.logits);
    return {apply(cal, ds), ds.labels()};
  }
  if (flags.model.empty() || flags.inputs.empty()) {
    throw UsageError("give --logits, or both --model and --inputs");
  }
  auto model = load_model_json(flags.model);
  auto ds = load_features_csv(flags.inputs);
  ds.check_labels(model.output_dim());
  return {apply(cal, model, ds), ds.labels()};
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Calibration metrics, reliability diagrams and post-hoc calibrators", "clampcal"};
  app.require_subcommand(1);

  DataFlags data;
  std::string out_path;
  std::size_t bins = kDefaultBins;
  std::size_t ranges = kDefaultRanges;

  auto* metrics_cmd = app.add_subcommand("metrics", "Compute ECE, SCE, ACE and NLL");
  data.add_to(metrics_cmd, true);
  metrics_cmd->add_option("--bins", bins, "Equal-width bins for ECE/SCE");
  metrics_cmd->add_option("--ranges", ranges, "Equal-mass ranges for ACE");
  metrics_cmd->add_option("--out", out_path, "Write JSON here instead of stdout");

  int width = 640;
  int height = 480;
  std::string expected = "midpoint";
  auto* diagram_cmd = app.add_subcommand("diagram", "Build a reliability diagram (JSON or SVG)");
  data.add_to(diagram_cmd, true);
  diagram_cmd->add_option("--bins", bins, "Number of bins");
  diagram_cmd->add_option("--out", out_path, "Output file; .svg renders SVG, otherwise JSON");
  diagram_cmd->add_option("--width", width, "SVG width in pixels");
  diagram_cmd->add_option("--height", height, "SVG height in pixels");
  diagram_cmd->add_option("--expected", expected, "Expected-bar height: midpoint or mean")
      ->check(CLI::IsMember({"midpoint", "mean"}));

  ConfigFlags fit;
  std::string calibrator_out;
  auto* fit_t_cmd = app.add_subcommand("fit-temperature", "Fit temperature scaling on logits");
  fit_t_cmd->add_option("--logits", data.logits, "Logits CSV")->required();
  fit.add_to(fit_t_cmd);
  fit_t_cmd->add_option("--out", out_path, "Write the fit report here instead of stdout");
  fit_t_cmd->add_option("--calibrator-out", calibrator_out, "Also write the calibrator JSON");

  auto* fit_nc_cmd =
      app.add_subcommand("fit-clamping", "Fit input perturbation and temperature through a model");
  fit_nc_cmd->add_option("--model", data.model, "Model JSON")->required();
  fit_nc_cmd->add_option("--inputs", data.inputs, "Features CSV")->required();
  fit.add_to(fit_nc_cmd);
  fit_nc_cmd->add_option("--out", out_path, "Write the fit report here instead of stdout");
  fit_nc_cmd->add_option("--calibrator-out", calibrator_out, "Also write the calibrator JSON");

  auto* apply_cmd = app.add_subcommand("apply", "Emit calibrated probabilities");
  data.add_to(apply_cmd, true);
  apply_cmd->add_option("--out", out_path, "Write JSON here instead of stdout");

  ServiceOptions serve;
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP service");
  serve_cmd->add_option("--host", serve.host, "Listen address")->envname("CLAMPCAL_HOST");
  serve_cmd->add_option("--port", serve.port, "Listen port")->envname("CLAMPCAL_PORT");
  serve_cmd->add_option("--max-upload-mb", serve.max_upload_mb, "Request body limit")
      ->envname("CLAMPCAL_MAX_UPLOAD_MB");
  serve_cmd->add_option("--workers", serve.workers, "Fit worker threads")
      ->envname("CLAMPCAL_WORKERS");
  serve_cmd->add_option("--static-dir", serve.static_dir, "Static assets served under /")
      ->envname("CLAMPCAL_STATIC_DIR");
  serve_cmd->add_option("--snapshot", serve.snapshot, "Store snapshot file")
      ->envname("CLAMPCAL_SNAPSHOT");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (app.got_subcommand(metrics_cmd)) {
      auto ev = evaluate_data(data);
      emit(out, out_path, to_json(compute_report(ev.probs, ev.labels, bins, ranges)));
    } else if (app.got_subcommand(diagram_cmd)) {
      auto ev = evaluate_data(data);
      auto d = build_diagram(ev.probs, ev.labels, bins);
      if (out_path.ends_with(".svg")) {
        SvgOptions opts;
        opts.expected = expected == "mean" ? ExpectedBar::mean_confidence : ExpectedBar::midpoint;
        write_text(out_path, render_svg(d, width, height, opts));
      } else {
        emit(out, out_path, to_json(d));
      }
    } else if (app.got_subcommand(fit_t_cmd)) {
      auto config = fit.resolve();
      auto ds = load_logits_csv(data.logits);
      if (fit.calib_fraction) ds = split(ds, *fit.calib_fraction, config.seed).first;
      auto report = fit_temperature(ds, config);
      if (!calibrator_out.empty()) write_text(calibrator_out, to_json(report.calibrator) + '\n');
      emit(out, out_path, to_json(report));
    } else if (app.got_subcommand(fit_nc_cmd)) {
      auto config = fit.resolve();
      auto model = load_model_json(data.model);
      auto ds = load_features_csv(data.inputs);
      if (fit.calib_fraction) ds = split(ds, *fit.calib_fraction, config.seed).first;
      auto report = fit_neural_clamping(model, ds, config);
      if (!calibrator_out.empty()) write_text(calibrator_out, to_json(report.calibrator) + '\n');
      emit(out, out_path, to_json(report));
    } else if (app.got_subcommand(apply_cmd)) {
      auto ev = evaluate_data(data);
      nlohmann::ordered_json j;
      auto probs = nlohmann::ordered_json::array();
      auto classes = nlohmann::ordered_json::array();
      for (std::size_t i = 0; i < ev.probs.num_samples(); ++i) {
        auto row = ev.probs.row(i);
        probs.push_back(std::vector<double>(row.begin(), row.end()));
        classes.push_back(predict_row(row).predicted_class);
      }
      j["probabilities"] = std::move(probs);
      j["predicted_class"] = std::move(classes);
      emit(out, out_path, j.dump());
    } else if (app.got_subcommand(serve_cmd)) {
      return run_service(serve);
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const NotFoundError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

}  // namespace clampcal
