#include "mapfm/cli.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "mapfm/config.hpp"
#include "mapfm/error.hpp"
#include "mapfm/io.hpp"
#include "mapfm/trainer.hpp"

namespace mapfm {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

struct UsageError : Error {
  using Error::Error;
};

const char* const kLossKeys[] = {"total", "l_pts", "l_cls", "l_dir", "l_bevseg", "l_pvseg", "l_surf"};
const char* const kColors[] = {"#000000", "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"};

std::string opt(const CLI::App& app, const std::string& name) {
  return app.count(name) ? app.get_option(name)->as<std::string>() : std::string();
}

TrainConfig config_or_default(const std::string& path) { return path.empty() ? TrainConfig{} : load_config(path); }

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string xml_escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    if (c == '<') o += "&lt;";
    else if (c == '>') o += "&gt;";
    else if (c == '&') o += "&amp;";
    else o += c;
  }
  return o;
}

ordered_json read_metrics(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  ordered_json series;
  series["step"] = json::array();
  for (const char* k : kLossKeys) series[k] = json::array();
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const json::exception&) {
      throw Error(path.string() + ":" + std::to_string(lineno) + ": malformed JSON line");
    }
    if (!j.contains("step")) throw Error(path.string() + ":" + std::to_string(lineno) + ": missing 'step'");
    series["step"].push_back(j["step"]);
    for (const char* k : kLossKeys) {
      if (!j.contains(k)) throw Error(path.string() + ":" + std::to_string(lineno) + ": missing '" + k + "'");
      series[k].push_back(j[k]);
    }
  }
  if (series["step"].empty()) throw Error(path.string() + ": no metrics");
  return series;
}

int cmd_gen(const CLI::App& app, std::ostream& out) {
  const auto cfg_path = opt(app, "--config");
  TrainConfig cfg = config_or_default(cfg_path);
  if (app.count("--seed")) cfg.data.master_seed = app.get_option("--seed")->as<std::uint64_t>();
  if (app.count("--num-scenes")) cfg.num_scenes = app.get_option("--num-scenes")->as<int>();
  if (cfg.num_scenes < 1) throw UsageError("gen: --num-scenes must be >= 1");
  cfg.data.threads = env_threads();
  const fs::path dir = app.get_option("--out")->as<std::string>();
  const json manifest = build_dataset(cfg.data, cfg.num_scenes, dir);
  const std::string sha = dataset_sha256(dir);
  write_text(dir / "gen.json",
             ordered_json{{"num_scenes", cfg.num_scenes}, {"master_seed", cfg.data.master_seed}, {"sha256", sha}}.dump(2) +
                 "\n");
  out << "wrote " << cfg.num_scenes << " scenes to " << dir.string() << "\nsha256 " << sha << "\n";
  return 0;
}

int cmd_train(const CLI::App& app, std::ostream& out) {
  TrainConfig cfg = config_or_default(opt(app, "--config"));
  const fs::path dir = app.get_option("--out")->as<std::string>();
  const TrainResult r = train(cfg, app.get_option("--data")->as<std::string>(), dir, env_threads());
  ordered_json summary;
  summary["steps"] = cfg.steps;
  summary["dataset_sha256"] = r.dataset_sha256;
  summary["first_total"] = r.first.total;
  summary["final_total"] = r.last.total;
  summary["train"] = report_to_json(r.train.report);
  if (r.val) summary["val"] = report_to_json(r.val->report);
  write_text(dir / "train_summary.json", summary.dump(2) + "\n");
  out << "loss " << r.first.total << " -> " << r.last.total << "\n";
  out << format_report_table(r.train.report, "train");
  if (r.val) out << format_report_table(r.val->report, "val");
  return 0;
}

int cmd_eval(const CLI::App& app, std::ostream& out) {
  EvalConfig ec;
  if (app.count("--thresholds")) ec.thresholds = app.get_option("--thresholds")->as<std::vector<double>>();
  try {
    ec.validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  const auto preds = read_scored_maps(app.get_option("--pred")->as<std::string>());
  const auto gts = read_vector_maps(app.get_option("--gt")->as<std::string>());
  const APReport r = evaluate(preds, gts, ec);
  if (app.count("--out")) write_text(app.get_option("--out")->as<std::string>(), report_to_json(r).dump(2) + "\n");
  out << format_report_table(r, "eval");
  return 0;
}

int cmd_ablate(const CLI::App& app, std::ostream& out) {
  AblationVariant v;
  try {
    v = ablation_variant_from_string(app.get_option("--variant")->as<std::string>());
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  TrainConfig cfg = config_or_default(opt(app, "--config"));
  const fs::path dir = app.get_option("--out")->as<std::string>();
  run_ablation(v, cfg, dir, env_threads());
  out << read_text(dir / ("ablation_" + std::string(to_string(v)) + ".txt"));
  return 0;
}

int cmd_plot(const CLI::App& app, std::ostream& out) {
  const fs::path metrics = app.get_option("--metrics")->as<std::string>();
  const fs::path dir = app.get_option("--out")->as<std::string>();
  std::vector<std::string> reports;
  if (app.count("--report")) reports = app.get_option("--report")->as<std::vector<std::string>>();
  else
    for (const char* s : {"eval_train.json", "eval_val.json"})
      if (fs::exists(metrics.parent_path() / s)) reports.push_back((metrics.parent_path() / s).string());

  const ordered_json series = read_metrics(metrics);
  fs::create_directories(dir);
  write_text(dir / "loss_curves.json", series.dump() + "\n");
  write_text(dir / "loss_curves.svg", loss_curve_svg(series));
  out << "wrote " << (dir / "loss_curves.svg").string() << "\n";
  if (!reports.empty()) {
    ordered_json bars = ordered_json::array();
    for (const std::string& p : reports) {
      const APReport r = report_from_json(read_json(p));
      bars.push_back({{"label", fs::path(p).stem().string()}, {"report", report_to_json(r)}});
    }
    write_text(dir / "ap_bars.json", bars.dump(2) + "\n");
    write_text(dir / "ap_bars.svg", ap_bar_svg(bars));
    out << "wrote " << (dir / "ap_bars.svg").string() << "\n";
  }
  return 0;
}

}  // namespace

std::string loss_curve_svg(const json& series) {
  const double W = 720, H = 420, L = 70, R = 150, T = 30, B = 50;
  const auto& steps = series.at("step");
  const double smax = std::max(1.0, steps.back().get<double>());
  double lo = 1e300, hi = -1e300;
  for (const char* k : kLossKeys)
    for (const auto& v : series.at(k)) {
      const double x = v.get<double>();
      if (x > 0) lo = std::min(lo, x), hi = std::max(hi, x);
    }
  if (lo > hi) lo = 1e-3, hi = 1.0;
  const double l0 = std::floor(std::log10(lo)), l1 = std::max(l0 + 1, std::ceil(std::log10(hi)));
  auto px = [&](double s) { return L + (W - L - R) * s / smax; };
  auto py = [&](double v) { return T + (H - T - B) * (l1 - std::log10(std::max(v, lo))) / (l1 - l0); };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << L << "\" y=\"18\" font-size=\"13\">Training losses (log scale)</text>\n";
  for (double d = l0; d <= l1; d += 1) {
    o << "<line x1=\"" << L << "\" x2=\"" << W - R << "\" y1=\"" << num(py(std::pow(10, d))) << "\" y2=\""
      << num(py(std::pow(10, d))) << "\" stroke=\"#ddd\"/>\n";
    o << "<text x=\"" << L - 6 << "\" y=\"" << num(py(std::pow(10, d)) + 4) << "\" text-anchor=\"end\">1e" << d
      << "</text>\n";
  }
  o << "<line x1=\"" << L << "\" x2=\"" << W - R << "\" y1=\"" << H - B << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  o << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">step (max " << smax
    << ")</text>\n";
  for (std::size_t k = 0; k < std::size(kLossKeys); ++k) {
    o << "<polyline fill=\"none\" stroke=\"" << kColors[k] << "\" stroke-width=\"" << (k == 0 ? 2 : 1)
      << "\" points=\"";
    const auto& ys = series.at(kLossKeys[k]);
    for (std::size_t i = 0; i < ys.size(); ++i)
      o << num(px(steps[i].get<double>())) << "," << num(py(ys[i].get<double>())) << " ";
    o << "\"/>\n";
    o << "<text x=\"" << W - R + 10 << "\" y=\"" << T + 16 * (k + 1) << "\" fill=\"" << kColors[k] << "\">"
      << kLossKeys[k] << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::string ap_bar_svg(const json& reports) {
  const char* cls[] = {"AP_div", "AP_ped", "AP_bound", "mAP"};
  const char* keys[] = {"divider", "ped_crossing", "boundary"};
  const double W = 720, H = 360, L = 60, T = 30, B = 60, R = 20;
  const std::size_t n = reports.size();
  const double group = (W - L - R) / 4.0, bar = group * 0.8 / std::max<std::size_t>(n, 1);
  auto py = [&](double v) { return T + (H - T - B) * (1.0 - std::clamp(v, 0.0, 1.0)); };
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << L << "\" y=\"18\" font-size=\"13\">Average precision</text>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = t / 4.0;
    o << "<line x1=\"" << L << "\" x2=\"" << W - R << "\" y1=\"" << num(py(v)) << "\" y2=\"" << num(py(v))
      << "\" stroke=\"#ddd\"/>\n";
    o << "<text x=\"" << L - 6 << "\" y=\"" << num(py(v) + 4) << "\" text-anchor=\"end\">" << num(v) << "</text>\n";
  }
  for (int c = 0; c < 4; ++c) {
    o << "<text x=\"" << num(L + group * (c + 0.5)) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << cls[c]
      << "</text>\n";
    for (std::size_t i = 0; i < n; ++i) {
      const json& r = reports[i].at("report");
      const double v = c < 3 ? r.at("ap_class").at(keys[c]).get<double>() : r.at("mAP").get<double>();
      const double x = L + group * c + group * 0.1 + bar * static_cast<double>(i);
      o << "<rect x=\"" << num(x) << "\" y=\"" << num(py(v)) << "\" width=\"" << num(bar * 0.9) << "\" height=\""
        << num(py(0) - py(v)) << "\" fill=\"" << kColors[1 + i % 6] << "\"/>\n";
      o << "<text x=\"" << num(x + bar * 0.45) << "\" y=\"" << num(py(v) - 3) << "\" text-anchor=\"middle\">"
        << std::fixed << std::setprecision(3) << v << "</text>\n";
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    o << "<text x=\"" << num(L + 120 * static_cast<double>(i)) << "\" y=\"" << H - 16 << "\" fill=\""
      << kColors[1 + i % 6] << "\">" << xml_escape(reports[i].at("label").get<std::string>()) << "</text>\n";
  o << "</svg>\n";
  return o.str();
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Desk-scale vectorized map construction pipeline", "mapfm"};
  app.require_subcommand(1);
  app.fallthrough(false);

  std::vector<double> thresholds;
  std::vector<std::string> reports;
  std::uint64_t seed = 0;
  int num_scenes = 0;

  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
  gen->add_option("--seed", seed, "Master seed (overrides data.master_seed)");
  gen->add_option("--num-scenes", num_scenes, "Number of scenes (overrides data.num_scenes)");
  gen->add_option("--config", "Config file")->check(CLI::ExistingFile);
  gen->add_option("--out", "Output dataset directory")->required();

  auto* tr = app.add_subcommand("train", "Train a model");
  tr->add_option("--config", "Config file")->check(CLI::ExistingFile);
  tr->add_option("--data", "Dataset directory")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--out", "Run directory")->required();

  auto* ev = app.add_subcommand("eval", "Evaluate predictions against ground truth");
  ev->add_option("--pred", "Prediction JSON")->required()->check(CLI::ExistingFile);
  ev->add_option("--gt", "Ground-truth JSON")->required()->check(CLI::ExistingFile);
  ev->add_option("--thresholds", thresholds, "Chamfer thresholds in metres (default 0.5,1.0,1.5)")->delimiter(',');
  ev->add_option("--out", "Report JSON path");

  auto* ab = app.add_subcommand("ablate", "Run an ablation over one configuration axis");
  ab->add_option("--variant", "arss_on_off | aggregation | freeze_policy")->required();
  ab->add_option("--config", "Base config file")->check(CLI::ExistingFile);
  ab->add_option("--out", "Output directory")->required();

  auto* pl = app.add_subcommand("plot", "Plot loss curves and AP bars");
  pl->add_option("--metrics", "metrics.jsonl")->required()->check(CLI::ExistingFile);
  pl->add_option("--report", reports, "APReport JSON files (default: eval_*.json next to the metrics)");
  pl->add_option("--out", "Output directory")->required();

  std::vector<std::string> rev(args.rbegin(), args.rend());
  if (!rev.empty()) rev.pop_back();
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return 1;
  }

  CLI::App* sub = app.get_subcommands().front();
  try {
    if (sub == gen) return cmd_gen(*sub, out);
    if (sub == tr) return cmd_train(*sub, out);
    if (sub == ev) return cmd_eval(*sub, out);
    if (sub == ab) return cmd_ablate(*sub, out);
    return cmd_plot(*sub, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n" << sub->help();
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

int dispatch(int argc, const char* const* argv) {
  return dispatch(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}

}  // namespace mapfm
