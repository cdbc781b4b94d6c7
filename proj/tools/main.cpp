#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rankloss/commands.hpp"

namespace {

std::string number_to_string(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v.get<double>());
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"per-layer low-rank factorization for small dense networks"};
  app.require_subcommand(1);

  rankloss::TrainToyArgs train;
  std::string train_out = ".";
  auto* train_cmd = app.add_subcommand("train-toy", "train a deterministic MLP fixture");
  train_cmd->add_option("--arch", train.arch, "layer sizes, input first (e.g. 16,64,64,3)")
      ->required()
      ->delimiter(',');
  train_cmd->add_option("--data", train.data, "dataset csv or generator spec")->required();
  train_cmd->add_option("--steps", train.steps, "full-batch gradient steps");
  train_cmd->add_option("--lr", train.learning_rate, "learning rate");
  train_cmd->add_option("--seed", train.seed, "rng seed")->required();
  train_cmd->add_option("--out", train_out, "output directory");

  rankloss::CalibrateArgs cal;
  std::string cal_model, cal_out = ".";
  auto* cal_cmd = app.add_subcommand("calibrate", "select per-layer eps by probing");
  cal_cmd->add_option("--model", cal_model, "model json")->required();
  cal_cmd->add_option("--data", cal.data, "dataset csv or generator spec")->required();
  cal_cmd->add_option("--tol", cal.tolerance, "probe tolerance");
  cal_cmd->add_option("--seed", cal.seed, "seed for generated datasets");
  cal_cmd->add_option("--out", cal_out, "output directory");
  cal_cmd->add_flag("--json", cal.json_stdout, "print the profile as json");

  rankloss::CompressArgs comp;
  std::string comp_model, comp_out = ".";
  std::string comp_mode = "lossless", comp_refresh = "once", comp_config;
  bool rank_by_predicted = false;
  auto* comp_cmd = app.add_subcommand("compress", "factorize layers under the noise box");
  comp_cmd->add_option("--model", comp_model, "model json")->required();
  comp_cmd->add_option("--data", comp.data, "calibration csv or generator spec")->required();
  comp_cmd->add_option("--holdout", comp.holdout, "held-out csv or generator spec");
  comp_cmd->add_option("--mode", comp_mode, "lossless|compact");
  comp_cmd->add_option("--eps", comp.eps, "'calibrate' or a positive number");
  comp_cmd->add_option("--tol", comp.tolerance, "probe tolerance for calibration");
  comp_cmd->add_option("--refresh-grad", comp_refresh, "once|per-layer");
  comp_cmd->add_flag("--rank-by-predicted", rank_by_predicted,
                     "pick candidates by predicted delta instead of measured loss");
  comp_cmd->add_flag("--refine", comp.refine_factors,
                     "projected refinement step inside the noise box");
  comp_cmd->add_flag("--curves", comp.curves, "emit per-layer rank curve csvs");
  comp_cmd->add_option("--seed", comp.seed, "seed echoed into the report");
  comp_cmd->add_option("--report-format", comp.report_format, "json|csv");
  comp_cmd->add_option("--out", comp_out, "output directory");
  comp_cmd->add_flag("--json", comp.json_stdout, "print the report as json");
  comp_cmd->add_option("--config", comp_config, "json config file; explicit flags win");

  rankloss::ProbeArgs probe;
  std::string probe_model, probe_out = ".";
  auto* probe_cmd = app.add_subcommand("probe", "first-order validity probe per layer");
  probe_cmd->add_option("--model", probe_model, "model json")->required();
  probe_cmd->add_option("--data", probe.data, "dataset csv or generator spec")->required();
  probe_cmd->add_option("--layers", probe.layers, "layer indices (default: all)")
      ->delimiter(',');
  probe_cmd->add_option("--seed", probe.seed, "seed for generated datasets");
  probe_cmd->add_option("--out", probe_out, "output directory");
  probe_cmd->add_flag("--json", probe.json_stdout, "print the records as json");

  rankloss::EvalArgs ev;
  std::string eval_model;
  auto* eval_cmd = app.add_subcommand("eval", "loss and accuracy of a model");
  eval_cmd->add_option("--model", eval_model, "model json")->required();
  eval_cmd->add_option("--data", ev.data, "dataset csv or generator spec")->required();
  eval_cmd->add_option("--seed", ev.seed, "seed for generated datasets");
  eval_cmd->add_flag("--json", ev.json_stdout, "print metrics as json");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed()) {
      train.out_dir = train_out;
      return rankloss::cmd_train_toy(train);
    }
    if (cal_cmd->parsed()) {
      cal.model = cal_model;
      cal.out_dir = cal_out;
      return rankloss::cmd_calibrate(cal);
    }
    if (comp_cmd->parsed()) {
      if (!comp_config.empty()) {
        std::ifstream in(comp_config);
        if (!in) throw rankloss::IoError("cannot open config file: " + comp_config);
        nlohmann::json j;
        try {
          in >> j;
        } catch (const nlohmann::json::exception& e) {
          throw rankloss::IoError("cannot parse config file " + comp_config + ": " +
                                  e.what());
        }
        if (j.contains("mode") && !comp_cmd->count("--mode"))
          comp_mode = j["mode"].get<std::string>();
        if (j.contains("eps") && !comp_cmd->count("--eps"))
          comp.eps = number_to_string(j["eps"]);
        if (j.contains("tol") && !comp_cmd->count("--tol"))
          comp.tolerance = j["tol"].get<double>();
        if (j.contains("refresh_grad") && !comp_cmd->count("--refresh-grad"))
          comp_refresh = j["refresh_grad"].get<std::string>();
        if (j.contains("rank_by_measured") && !comp_cmd->count("--rank-by-predicted"))
          rank_by_predicted = !j["rank_by_measured"].get<bool>();
        if (j.contains("refine_factors") && !comp_cmd->count("--refine"))
          comp.refine_factors = j["refine_factors"].get<bool>();
        if (j.contains("curves") && !comp_cmd->count("--curves"))
          comp.curves = j["curves"].get<bool>();
        if (j.contains("report_format") && !comp_cmd->count("--report-format"))
          comp.report_format = j["report_format"].get<std::string>();
      }
      comp.model = comp_model;
      comp.out_dir = comp_out;
      comp.mode = rankloss::mode_from_string(comp_mode);
      comp.refresh = rankloss::gradient_refresh_from_string(comp_refresh);
      comp.rank_by_measured = !rank_by_predicted;
      return rankloss::cmd_compress(comp);
    }
    if (probe_cmd->parsed()) {
      probe.model = probe_model;
      probe.out_dir = probe_out;
      return rankloss::cmd_probe(probe);
    }
    if (eval_cmd->parsed()) {
      ev.model = eval_model;
      return rankloss::cmd_eval(ev);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
