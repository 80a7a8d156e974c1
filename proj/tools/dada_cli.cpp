#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dada/checkpoint.hpp"
#include "dada/dataset.hpp"
#include "dada/detect.hpp"
#include "dada/eval.hpp"
#include "dada/inject.hpp"
#include "dada/pipeline.hpp"
#include "dada/plot.hpp"
#include "dada/run_config.hpp"
#include "dada/synth.hpp"
#include "dada/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::string run_dir;
  std::optional<std::uint64_t> seed;
};

// Flags that become dotted overrides, collected per command.
struct FlagOverrides {
  std::map<std::string, std::string> values;  // dotted key -> raw text

  void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    app->add_option_function<std::string>(
        flag, [this, key](const std::string& v) { values[key] = v; }, help);
  }
};

dada::RunConfig resolve(const Common& c, const FlagOverrides& f) {
  std::vector<std::string> sets = c.sets;
  if (c.seed) sets.push_back("seed=" + std::to_string(*c.seed));
  if (!c.run_dir.empty()) sets.push_back("run_dir=" + json(c.run_dir).dump());
  for (const auto& [k, v] : f.values) sets.push_back(k + "=" + v);
  const std::optional<fs::path> path = c.config.empty() ? std::nullopt : std::optional<fs::path>(c.config);
  return dada::load_run_config(path, sets);
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw dada::DataError("MalformedFile", "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

// meta.json collects one record per command that wrote into a directory.
void write_meta(const fs::path& dir, const std::string& command, const dada::RunConfig& cfg,
                const std::vector<fs::path>& outputs) {
  const auto path = dir / "meta.json";
  json meta = json::object();
  if (fs::is_regular_file(path)) {
    try {
      std::ifstream in(path);
      meta = json::parse(in);
    } catch (const json::exception&) {
      meta = json::object();
    }
  }
  const json cfg_json = dada::to_json(cfg);
  json files = json::array();
  for (const auto& o : outputs) files.push_back(o.filename().string());
  meta["version"] = dada::kVersion;
  meta["commands"][command] = {{"config_hash", dada::config_hash(cfg_json)},
                               {"seed", cfg.seed},
                               {"config", cfg_json},
                               {"outputs", files},
                               {"versions",
                                {{"dada", dada::kVersion},
                                 {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                                               "." + std::to_string(EIGEN_MINOR_VERSION)},
                                 {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                                       std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                                       std::to_string(NLOHMANN_JSON_VERSION_PATCH)}}}};
  write_json(path, meta);
}

// ---- shared steps ----

dada::train::Trainer<float> train_with_log(dada::train::Trainer<float> t, const dada::train::TrainData& data,
                                           int epochs, const fs::path& log_path) {
  std::ofstream log(log_path, t.epoch > 0 ? std::ios::app : std::ios::trunc);
  if (!log) throw dada::DataError("MalformedFile", "cannot write " + log_path.string());
  double offset = 0.0;
  for (int e = 0; e < epochs; ++e) {
    double last = 0.0;
    t.run_epoch(data, [&](const dada::train::StepRecord& r) {
      auto rec = r;
      rec.wallclock += offset;
      last = r.wallclock;
      log << dada::train::to_json(rec).dump() << '\n';
    });
    offset += last;
    const auto& h = t.history.back();
    std::cerr << "epoch " << h.epoch << " loss_norm " << h.loss_norm << " loss_abnorm " << h.loss_abnorm << '\n';
  }
  return t;
}

json history_json(const dada::train::Trainer<float>& t) {
  json h = json::array();
  for (const auto& e : t.history) h.push_back({{"epoch", e.epoch}, {"loss_norm", e.loss_norm}, {"loss_abnorm", e.loss_abnorm}});
  return h;
}

void write_loss_plot(const fs::path& path, const dada::train::Trainer<float>& t) {
  if (t.history.size() < 2) return;
  dada::plot::ScorePlot p;
  p.title = "epoch mean loss_norm (top) and loss_abnorm (bottom)";
  std::vector<double> ln, la;
  for (const auto& e : t.history) {
    ln.push_back(e.loss_norm);
    la.push_back(e.loss_abnorm);
  }
  p.values = ln;
  p.scores = la;
  dada::plot::write_svg(path, p);
}

dada::eval::EvalReport evaluate_manifest(const dada::net::Network<float>& model, const dada::RunConfig& cfg,
                                         const fs::path& out_dir, std::vector<fs::path>& outputs) {
  dada::require_file(cfg.dataset.test, "dataset.test");
  const auto streams = dada::test_streams(dada::load_manifest(cfg.dataset.test));
  std::vector<dada::eval::EvalReport> reports;
  for (const auto& s : streams) {
    const auto r = dada::evaluate_stream(model, s, cfg.detect);
    reports.push_back(r.report);
    const auto stem = fs::path(s.test.path).stem().string();
    write_json(out_dir / (stem + "_report.json"), dada::eval::to_json(r.report));
    outputs.push_back(out_dir / (stem + "_report.json"));
  }
  return dada::mean_report(reports);
}

std::vector<double> read_column(const fs::path& path, const std::string& column) {
  std::ifstream in(path);
  if (!in) throw dada::DataError("MalformedFile", "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw dada::DataError("MalformedFile", "missing header in " + path.string());
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(dada::detail::trim(cell));
  }
  const auto it = std::find(header.begin(), header.end(), column);
  if (it == header.end()) throw dada::DataError("MalformedFile", path.string() + " has no '" + column + "' column");
  const auto col = static_cast<std::size_t>(it - header.begin());
  std::vector<double> out;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (dada::detail::trim(line).empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t k = 0;
    bool found = false;
    while (std::getline(ss, cell, ',')) {
      if (k++ == col) {
        try {
          out.push_back(std::stod(cell));
        } catch (const std::exception&) {
          throw dada::DataError("MalformedFile", path.string() + ":" + std::to_string(row) + ": bad value '" + cell + "'");
        }
        found = true;
        break;
      }
    }
    if (!found) throw dada::DataError("MalformedFile", path.string() + ":" + std::to_string(row) + ": short row");
  }
  return out;
}

dada::Labels to_labels(const std::vector<double>& v, const std::string& what) {
  dada::Labels y(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] != 0.0 && v[i] != 1.0) throw dada::DataError("MalformedFile", what + " must hold 0/1 values");
    y[i] = v[i] == 1.0 ? 1 : 0;
  }
  return y;
}

// ---- commands ----

int cmd_synth(const dada::RunConfig& cfg, const std::string& out) {
  const fs::path dir = out.empty() ? fs::path(cfg.run_dir) : fs::path(out);
  const auto corpus = dada::synth::write_corpus(dir, cfg.synth);
  write_meta(dir, "synth", cfg, {corpus.train_manifest, corpus.test_manifest});
  std::cout << corpus.train_manifest.string() << '\n' << corpus.test_manifest.string() << '\n';
  return 0;
}

int cmd_inject(const dada::RunConfig& cfg, const std::vector<std::string>& inputs, const std::string& out) {
  const fs::path dir = out.empty() ? fs::path(cfg.run_dir) : fs::path(out);
  fs::create_directories(dir);
  std::vector<fs::path> outputs;
  std::uint64_t k = 0;
  for (const auto& in : inputs) {
    auto ts = dada::load_csv(in);
    auto spec = cfg.inject;
    spec.seed = cfg.inject.seed + 1000003ULL * k++;
    const auto [corrupted, logs] = dada::inject::inject_series(ts, spec);
    const auto stem = fs::path(in).stem().string() + "_injected";
    dada::write_csv(dir / (stem + ".csv"), corrupted);
    json log = {{"source", fs::path(in).filename().string()}, {"spec", dada::inject::to_json(spec)}, {"channels", json::array()}};
    for (std::size_t c = 0; c < logs.size(); ++c) {
      json recs = json::array();
      for (const auto& r : logs[c]) recs.push_back(dada::inject::to_json(r));
      log["channels"].push_back({{"channel", c}, {"records", recs}});
    }
    write_json(dir / (stem + ".log.json"), log);
    outputs.push_back(dir / (stem + ".csv"));
    outputs.push_back(dir / (stem + ".log.json"));
  }
  write_meta(dir, "inject", cfg, outputs);
  return 0;
}

int cmd_pretrain(const dada::RunConfig& cfg, const std::string& resume) {
  dada::require_file(cfg.dataset.manifest, "dataset.manifest");
  const fs::path dir = cfg.run_dir;
  fs::create_directories(dir);
  const auto data = dada::train::load_train_data(dada::load_manifest(cfg.dataset.manifest), cfg.net.window,
                                                 cfg.train.train_stride);
  std::cerr << "normal windows " << data.normal.rows() << " abnormal windows " << data.abnormal.rows() << '\n';
  auto t = resume.empty() ? dada::train::Trainer<float>(dada::net::Network<float>(cfg.net, cfg.train.seed), cfg.train)
                          : dada::train::Trainer<float>::from_archive(dada::load_archive(resume), cfg.train);
  const int remaining = std::max(0, cfg.train.epochs - t.epoch);
  t = train_with_log(std::move(t), data, remaining, dir / "train_log.ndjson");
  dada::save_archive(dir / "model.ckpt", t.archive());
  write_json(dir / "history.json", history_json(t));
  write_loss_plot(dir / "loss.svg", t);
  write_meta(dir, "pretrain", cfg, {dir / "model.ckpt", dir / "train_log.ndjson", dir / "history.json"});
  return 0;
}

int cmd_finetune(const dada::RunConfig& cfg, const std::string& checkpoint) {
  dada::require_file(checkpoint, "--checkpoint");
  dada::require_file(cfg.dataset.target, "dataset.target");
  const fs::path dir = cfg.run_dir;
  fs::create_directories(dir);
  const auto archive = dada::load_archive(checkpoint);
  const auto model = dada::network_from_archive<float>(archive);
  const auto data = dada::train::finetune_data(dada::load_manifest(cfg.dataset.target), model.config().window,
                                               cfg.train.train_stride, cfg.inject);
  auto t = dada::train::Trainer<float>(model, cfg.train);
  t = train_with_log(std::move(t), data, cfg.train.epochs, dir / "train_log.ndjson");
  dada::save_archive(dir / "model.ckpt", t.archive());
  write_json(dir / "history.json", history_json(t));
  write_meta(dir, "finetune", cfg, {dir / "model.ckpt", dir / "train_log.ndjson", dir / "history.json"});
  return 0;
}

int cmd_score(const dada::RunConfig& cfg, const std::string& checkpoint, const std::string& input,
              const std::string& calibration, const std::string& out, bool plot) {
  dada::require_file(checkpoint, "--checkpoint");
  dada::require_file(input, "--input");
  if (out.empty()) throw dada::ConfigError("--out is required");
  const auto model = dada::load_checkpoint<float>(checkpoint);
  const auto ts = dada::load_csv(input);
  std::optional<dada::TimeSeries> calib;
  if (!calibration.empty()) calib = dada::load_csv(calibration);
  const auto ss = dada::score_and_threshold(model, ts, calib, cfg.detect);

  const fs::path out_path(out);
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  std::ofstream csv(out_path);
  if (!csv) throw dada::DataError("MalformedFile", "cannot write " + out);
  csv << "t,score,decision\n" << std::setprecision(17);
  for (std::size_t t = 0; t < ss.scores.size(); ++t) csv << t << ',' << ss.scores[t] << ',' << int(ss.decisions[t]) << '\n';
  csv.close();

  fs::path sidecar = out_path;
  sidecar.replace_extension(".json");
  json side = {{"threshold", ss.threshold},
               {"spot_config", dada::spot::to_json(cfg.detect.spot)},
               {"spot", dada::spot::to_json(*ss.spot)},
               {"n_pairs", cfg.detect.n_pairs},
               {"mask_ratio", cfg.detect.mask_ratio},
               {"seed", cfg.detect.seed},
               {"input", fs::path(input).filename().string()},
               {"calibration", calibration.empty() ? json(nullptr) : json(fs::path(calibration).filename().string())}};
  write_json(sidecar, side);
  std::vector<fs::path> outputs{out_path, sidecar};
  if (plot) {
    dada::plot::ScorePlot p;
    p.title = fs::path(input).filename().string();
    p.scores = ss.scores;
    std::vector<double> first(ts.values.rows());
    for (Eigen::Index i = 0; i < ts.values.rows(); ++i) first[static_cast<std::size_t>(i)] = ts.values(i, 0);
    p.values = first;
    p.labels = ts.labels;
    p.decisions = ss.decisions;
    p.threshold = ss.threshold;
    fs::path svg = out_path;
    svg.replace_extension(".svg");
    dada::plot::write_svg(svg, p);
    outputs.push_back(svg);
  }
  write_meta(out_path.has_parent_path() ? out_path.parent_path() : fs::path("."), "score", cfg, outputs);
  return 0;
}

int cmd_evaluate(const dada::RunConfig& cfg, const std::string& scores_path, const std::string& labels_path,
                 const std::string& out) {
  dada::require_file(scores_path, "--scores");
  dada::require_file(labels_path, "--labels");
  if (out.empty()) throw dada::ConfigError("--out is required");
  const auto scores = read_column(scores_path, "score");
  const auto decisions = to_labels(read_column(scores_path, "decision"), "decision");
  const auto labels = to_labels(read_column(labels_path, "label"), "label");
  if (scores.size() != labels.size()) {
    throw dada::EvaluationError("LengthMismatch", "scores have " + std::to_string(scores.size()) + " rows, labels " +
                                                      std::to_string(labels.size()));
  }
  const auto report = dada::eval::evaluate(scores, decisions, labels);
  const fs::path out_path(out);
  write_json(out_path, dada::eval::to_json(report));
  std::vector<fs::path> outputs{out_path};
  if (!cfg.eval.alphas.empty()) {
    json hits = json::array();
    const auto gt = dada::eval::binary_to_events(labels);
    for (double a : cfg.eval.alphas) hits.push_back({{"alpha", a}, {"hit", dada::eval::quantile_hit(scores, gt, a)}});
    fs::path qh = out_path;
    qh.replace_filename(out_path.stem().string() + "_quantile_hit.json");
    write_json(qh, hits);
    outputs.push_back(qh);
  }
  std::cout << dada::eval::to_json(report).dump() << '\n';
  write_meta(out_path.has_parent_path() ? out_path.parent_path() : fs::path("."), "evaluate", cfg, outputs);
  return 0;
}

std::string fmt(double v) {
  if (!std::isfinite(v)) return "n/a";
  std::ostringstream s;
  s << std::fixed << std::setprecision(4) << v;
  return s.str();
}

int cmd_report(const dada::RunConfig& cfg, const std::vector<std::string>& reports, const std::string& out,
               const std::string& scores_path, const std::string& labels_path) {
  if (reports.empty() && scores_path.empty()) throw dada::ConfigError("report needs --reports or --scores");
  const fs::path dir = out.empty() ? fs::path(cfg.run_dir) : fs::path(out);
  fs::create_directories(dir);
  std::vector<fs::path> outputs;
  if (!reports.empty()) {
    std::vector<dada::eval::EvalReport> parsed;
    std::ostringstream md, csv;
    md << "| report | P | R | F1 | AUC | events hit |\n|---|---|---|---|---|---|\n";
    csv << "report,affiliation_p,affiliation_r,affiliation_f1,auc_roc,tp_events,total_events\n";
    for (const auto& r : reports) {
      dada::require_file(r, "report");
      std::ifstream in(r);
      json j;
      try {
        j = json::parse(in);
      } catch (const json::exception& ex) {
        throw dada::DataError("MalformedFile", r + ": " + ex.what());
      }
      const auto rep = dada::eval::report_from_json(j);
      parsed.push_back(rep);
      const auto name = fs::path(r).stem().string();
      md << "| " << name << " | " << fmt(rep.affiliation_p) << " | " << fmt(rep.affiliation_r) << " | "
         << fmt(rep.affiliation_f1) << " | " << fmt(rep.auc_roc) << " | " << rep.counts.tp_events << "/"
         << rep.counts.total_events << " |\n";
      csv << name << ',' << rep.affiliation_p << ',' << rep.affiliation_r << ',' << rep.affiliation_f1 << ','
          << (std::isfinite(rep.auc_roc) ? fmt(rep.auc_roc) : "") << ',' << rep.counts.tp_events << ','
          << rep.counts.total_events << '\n';
    }
    const auto mean = dada::mean_report(parsed);
    md << "| mean | " << fmt(mean.affiliation_p) << " | " << fmt(mean.affiliation_r) << " | "
       << fmt(mean.affiliation_f1) << " | " << fmt(mean.auc_roc) << " | " << mean.counts.tp_events << "/"
       << mean.counts.total_events << " |\n";
    std::ofstream(dir / "summary.md") << md.str();
    std::ofstream(dir / "summary.csv") << csv.str();
    write_json(dir / "summary.json", dada::eval::to_json(mean));
    outputs = {dir / "summary.md", dir / "summary.csv", dir / "summary.json"};
    std::cout << md.str();
  }
  if (!scores_path.empty()) {
    dada::require_file(scores_path, "--scores");
    dada::plot::ScorePlot p;
    p.title = fs::path(scores_path).filename().string();
    p.scores = read_column(scores_path, "score");
    p.decisions = to_labels(read_column(scores_path, "decision"), "decision");
    fs::path side = scores_path;
    side.replace_extension(".json");
    if (fs::is_regular_file(side)) {
      std::ifstream in(side);
      p.threshold = json::parse(in).value("threshold", std::nan(""));
    }
    if (!labels_path.empty()) {
      const auto ts = dada::load_csv(labels_path);
      std::vector<double> first(ts.values.rows());
      for (Eigen::Index i = 0; i < ts.values.rows(); ++i) first[static_cast<std::size_t>(i)] = ts.values(i, 0);
      p.values = first;
      p.labels = ts.labels;
    }
    const auto svg = dir / (fs::path(scores_path).stem().string() + ".svg");
    dada::plot::write_svg(svg, p);
    outputs.push_back(svg);
  }
  write_meta(dir, "report", cfg, outputs);
  return 0;
}

dada::RunConfig apply_variant(dada::RunConfig cfg, const std::string& variant) {
  if (variant == "full") return cfg;
  if (variant == "no-adabn") {
    cfg.net.adaptive = false;
  } else if (variant == "no-adversarial") {
    cfg.train.adversarial = false;
  } else if (variant == "no-dual") {
    cfg.net.dual_decoders = false;
  } else {
    throw dada::ConfigError("unknown ablation variant '" + variant + "'");
  }
  return cfg;
}

int cmd_ablation(const dada::RunConfig& base, const std::vector<std::string>& variants,
                 const std::vector<std::uint64_t>& seeds) {
  dada::require_file(base.dataset.manifest, "dataset.manifest");
  dada::require_file(base.dataset.test, "dataset.test");
  const fs::path dir = base.run_dir;
  fs::create_directories(dir);
  const auto data = dada::train::load_train_data(dada::load_manifest(base.dataset.manifest), base.net.window,
                                                 base.train.train_stride);
  json summary = json::object();
  std::ostringstream md;
  md << "| variant | mean F1 | mean AUC | config hash |\n|---|---|---|---|\n";
  for (const auto& v : variants) {
    std::vector<dada::eval::EvalReport> per_seed;
    std::string hash;
    for (auto seed : seeds) {
      auto cfg = apply_variant(base, v);
      cfg.seed = seed;
      cfg.train.seed = seed;
      cfg.detect.seed = seed;
      cfg.run_dir = (dir / v / ("seed" + std::to_string(seed))).string();
      hash = dada::config_hash(dada::to_json(apply_variant(base, v)));
      const fs::path run = cfg.run_dir;
      fs::create_directories(run);
      std::cerr << "== " << v << " seed " << seed << '\n';
      auto t = dada::train::Trainer<float>(dada::net::Network<float>(cfg.net, cfg.train.seed), cfg.train);
      t = train_with_log(std::move(t), data, cfg.train.epochs, run / "train_log.ndjson");
      dada::save_archive(run / "model.ckpt", t.archive());
      write_json(run / "history.json", history_json(t));
      std::vector<fs::path> outputs{run / "model.ckpt", run / "train_log.ndjson", run / "history.json"};
      const auto rep = evaluate_manifest(t.model, cfg, run, outputs);
      write_json(run / "report.json", dada::eval::to_json(rep));
      outputs.push_back(run / "report.json");
      write_meta(run, "ablation", cfg, outputs);
      per_seed.push_back(rep);
    }
    const auto mean = dada::mean_report(per_seed);
    json seeds_json = json::array();
    for (const auto& r : per_seed) seeds_json.push_back(dada::eval::to_json(r));
    summary[v] = {{"mean", dada::eval::to_json(mean)}, {"per_seed", seeds_json}, {"config_hash", hash}};
    md << "| " << v << " | " << fmt(mean.affiliation_f1) << " | " << fmt(mean.auc_roc) << " | " << hash << " |\n";
  }
  write_json(dir / "ablation.json", summary);
  std::ofstream(dir / "ablation.md") << md.str();
  std::cout << md.str();
  write_meta(dir, "ablation", base, {dir / "ablation.json", dir / "ablation.md"});
  return 0;
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "run config JSON");
  app->add_option("--set", c.sets, "dotted-key override, e.g. train.lr=1e-3")->take_all();
  app->add_option("--run-dir", c.run_dir, "output directory");
}

void add_train_flags(CLI::App* app, FlagOverrides& f) {
  const auto fields = dada::train::to_json(dada::train::TrainConfig{});
  for (const auto& [key, _] : fields.items()) {
    std::string flag = key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    if (flag == "seed") continue;
    f.add(app, "--" + flag, "train." + key, "train." + key);
  }
}

int report_error(const std::string& kind, const std::string& message, int code) {
  json rec = {{"error", {{"kind", kind}, {"message", message}, {"exit_code", code}}}};
  std::cerr << rec.dump() << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual adversarial decoders for zero-shot time series anomaly detection"};
  app.require_subcommand(1);
  app.set_version_flag("--version", dada::kVersion);

  Common common;
  FlagOverrides flags;
  std::uint64_t seed_value = 0;

  auto* synth = app.add_subcommand("synth", "generate the synthetic multi-domain corpus");
  std::string synth_out;
  add_common(synth, common);
  synth->add_option("--out", synth_out, "corpus directory (default: run_dir)");
  synth->add_option("--seed", seed_value, "corpus seed");

  auto* inject = app.add_subcommand("inject", "inject anomalies into CSV series");
  std::vector<std::string> inject_inputs;
  std::string inject_out;
  add_common(inject, common);
  inject->add_option("--input", inject_inputs, "input CSV files")->required();
  inject->add_option("--out", inject_out, "output directory (default: run_dir)");
  inject->add_option("--seed", seed_value, "injection seed");

  auto* pretrain = app.add_subcommand("pretrain", "pretrain on dataset.manifest");
  std::string resume;
  add_common(pretrain, common);
  add_train_flags(pretrain, flags);
  pretrain->add_option("--seed", seed_value, "training seed");
  pretrain->add_option("--resume", resume, "continue from a pretrain checkpoint");
  flags.add(pretrain, "--manifest", "dataset.manifest", "pretraining manifest");

  auto* finetune = app.add_subcommand("finetune", "fine-tune a checkpoint on dataset.target");
  std::string ft_checkpoint;
  add_common(finetune, common);
  add_train_flags(finetune, flags);
  finetune->add_option("--seed", seed_value, "training seed");
  finetune->add_option("--checkpoint", ft_checkpoint, "pretrained checkpoint")->required();
  flags.add(finetune, "--target", "dataset.target", "target manifest");

  auto* score = app.add_subcommand("score", "score a series and threshold it with SPOT");
  std::string sc_checkpoint, sc_input, sc_calib, sc_out;
  bool sc_plot = false;
  add_common(score, common);
  score->add_option("--checkpoint", sc_checkpoint, "model checkpoint")->required();
  score->add_option("--input", sc_input, "series CSV")->required();
  score->add_option("--calibration", sc_calib, "clean series used to calibrate SPOT");
  score->add_option("--out", sc_out, "scores CSV")->required();
  score->add_flag("--plot", sc_plot, "write an SVG next to the scores");
  flags.add(score, "--n-pairs", "detect.n_pairs", "mask pairs per window");
  flags.add(score, "--q", "detect.q", "SPOT risk");
  flags.add(score, "--seed", "detect.seed", "mask seed");

  auto* evaluate = app.add_subcommand("evaluate", "affiliation and AUC from scores and labels");
  std::string ev_scores, ev_labels, ev_out;
  add_common(evaluate, common);
  evaluate->add_option("--scores", ev_scores, "scores CSV (t,score,decision)")->required();
  evaluate->add_option("--labels", ev_labels, "CSV with a label column")->required();
  evaluate->add_option("--out", ev_out, "report JSON")->required();

  auto* report = app.add_subcommand("report", "aggregate reports into tables and plot scores");
  std::vector<std::string> rp_reports;
  std::string rp_out, rp_scores, rp_labels;
  add_common(report, common);
  report->add_option("--reports", rp_reports, "report JSON files");
  report->add_option("--out", rp_out, "output directory (default: run_dir)");
  report->add_option("--scores", rp_scores, "scores CSV to plot");
  report->add_option("--labels", rp_labels, "series CSV shown above the scores");

  auto* ablation = app.add_subcommand("ablation", "train and evaluate ablation variants");
  std::vector<std::string> ab_variants{"full", "no-adabn", "no-adversarial", "no-dual"};
  std::vector<std::uint64_t> ab_seeds{0, 1, 2};
  add_common(ablation, common);
  add_train_flags(ablation, flags);
  ablation->add_option("--variants", ab_variants, "full, no-adabn, no-adversarial, no-dual")->delimiter(',');
  ablation->add_option("--seeds", ab_seeds, "training seeds")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("UsageError", e.what(), static_cast<int>(dada::ExitCode::kConfig));
  }

  try {
    auto* cmd = app.get_subcommands().front();
    const auto* seed_opt = cmd->get_option_no_throw("--seed");
    if (cmd != score && seed_opt != nullptr && seed_opt->count() > 0) common.seed = seed_value;
    const auto cfg = resolve(common, flags);
    const std::string name = cmd->get_name();
    if (name == "synth") return cmd_synth(cfg, synth_out);
    if (name == "inject") return cmd_inject(cfg, inject_inputs, inject_out);
    if (name == "pretrain") return cmd_pretrain(cfg, resume);
    if (name == "finetune") return cmd_finetune(cfg, ft_checkpoint);
    if (name == "score") return cmd_score(cfg, sc_checkpoint, sc_input, sc_calib, sc_out, sc_plot);
    if (name == "evaluate") return cmd_evaluate(cfg, ev_scores, ev_labels, ev_out);
    if (name == "report") return cmd_report(cfg, rp_reports, rp_out, rp_scores, rp_labels);
    if (name == "ablation") return cmd_ablation(cfg, ab_variants, ab_seeds);
    return report_error("UsageError", "unknown command " + name, 2);
  } catch (const dada::Error& e) {
    return report_error(e.kind(), e.what(), static_cast<int>(e.exit_code()));
  } catch (const json::exception& e) {
    return report_error("ConfigError", e.what(), static_cast<int>(dada::ExitCode::kConfig));
  } catch (const std::exception& e) {
    return report_error("InternalError", e.what(), 1);
  }
}
