#include "mapfm/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <thread>

#include "mapfm/error.hpp"
#include "mapfm/io.hpp"

namespace mapfm {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr char kMagic[8] = {'M', 'A', 'P', 'F', 'M', 'C', 'K', 'P'};

static_assert(std::endian::native == std::endian::little, "checkpoint payload is written in host order");

ordered_json report_json(long step, const LossReport& r) {
  ordered_json j;
  j["step"] = step;
  j["l_pts"] = r.l_pts;
  j["l_cls"] = r.l_cls;
  j["l_dir"] = r.l_dir;
  j["l_bevseg"] = r.l_bevseg;
  j["l_pvseg"] = r.l_pvseg;
  j["l_surf"] = r.l_surf;
  j["total"] = r.total;
  return j;
}

json config_json(const TrainConfig& cfg) {
  json j = json::object();
  for (const auto& [k, v] : config_to_key_values(cfg)) j[k] = v;
  return j;
}

struct TensorEntry {
  std::string name;
  const ag::Matrix* value;
};

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
  std::vector<TensorEntry> entries;
  for (const auto& [name, m] : ckpt.params) entries.push_back({name, &m});
  for (const auto& [name, m] : ckpt.adam.m) entries.push_back({"adam.m/" + name, &m});
  for (const auto& [name, m] : ckpt.adam.v) entries.push_back({"adam.v/" + name, &m});

  ordered_json header;
  header["format_version"] = ckpt.format_version;
  header["step"] = ckpt.step;
  header["adam_t"] = ckpt.adam.t;
  header["config"] = ckpt.config;
  header["metrics"] = ckpt.metrics;
  ordered_json tensors = ordered_json::array();
  std::uint64_t offset = 0;
  for (const TensorEntry& e : entries) {
    ordered_json t;
    t["name"] = e.name;
    t["dtype"] = "f64";
    t["shape"] = {e.value->rows(), e.value->cols()};
    t["offset"] = offset;
    tensors.push_back(t);
    offset += static_cast<std::uint64_t>(e.value->size()) * sizeof(double);
  }
  header["tensors"] = tensors;
  header["payload_bytes"] = offset;
  const std::string text = header.dump();

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof kMagic);
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const TensorEntry& e : entries)
      out.write(reinterpret_cast<const char*>(e.value->data()),
                static_cast<std::streamsize>(e.value->size() * sizeof(double)));
    if (!out) throw Error("failed writing checkpoint " + path.string());
  }
  fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path) {
  const std::string bytes = read_text(path);
  auto fail = [&](const std::string& what) { return Error("checkpoint " + path.string() + ": " + what); };
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) throw fail("bad magic");
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, sizeof len);
  if (len > bytes.size() - 16) throw fail("truncated header");
  json header;
  try {
    header = json::parse(bytes.substr(16, len));
  } catch (const json::exception& e) {
    throw fail(std::string("malformed header: ") + e.what());
  }
  const std::size_t payload = 16 + len;
  auto field = [&](const char* k) -> const json& {
    if (!header.contains(k)) throw fail(std::string("missing field '") + k + "'");
    return header.at(k);
  };
  Checkpoint ck;
  const json& ver = field("format_version");
  if (!ver.is_number_integer() || ver.get<int>() != kCheckpointVersion)
    throw fail("unsupported format_version " + ver.dump() + " (expected " + std::to_string(kCheckpointVersion) + ")");
  ck.format_version = ver.get<int>();
  ck.step = field("step").get<long>();
  ck.adam.t = field("adam_t").get<long>();
  ck.config = field("config");
  ck.metrics = field("metrics");
  for (const json& t : field("tensors")) {
    const std::string name = t.at("name").get<std::string>();
    if (t.at("dtype") != "f64") throw fail("tensor '" + name + "': unsupported dtype " + t.at("dtype").dump());
    const auto shape = t.at("shape").get<std::vector<long>>();
    if (shape.size() != 2 || shape[0] < 0 || shape[1] < 0) throw fail("tensor '" + name + "': bad shape");
    const std::uint64_t off = t.at("offset").get<std::uint64_t>();
    const std::uint64_t n = static_cast<std::uint64_t>(shape[0]) * static_cast<std::uint64_t>(shape[1]);
    if (payload + off + n * sizeof(double) > bytes.size()) throw fail("truncated payload: tensor '" + name + "'");
    ag::Matrix m(shape[0], shape[1]);
    std::memcpy(m.data(), bytes.data() + payload + off, n * sizeof(double));
    if (name.starts_with("adam.m/")) ck.adam.m[name.substr(7)] = std::move(m);
    else if (name.starts_with("adam.v/")) ck.adam.v[name.substr(7)] = std::move(m);
    else ck.params.emplace_back(name, std::move(m));
  }
  return ck;
}

Checkpoint make_checkpoint(const Model& model, const AdamState& adam, long step, const TrainConfig& cfg,
                           json metrics) {
  Checkpoint ck;
  ck.step = step;
  ck.config = config_json(cfg);
  ck.metrics = std::move(metrics);
  ck.adam = adam;
  for (const std::string& n : model.params.names()) ck.params.emplace_back(n, model.params.get(n).value());
  return ck;
}

void restore_parameters(Model& model, const Checkpoint& ckpt) {
  std::set<std::string> seen;
  for (const auto& [name, m] : ckpt.params) {
    if (!model.params.contains(name)) throw Error("checkpoint: unknown parameter '" + name + "'");
    if (!seen.insert(name).second) throw Error("checkpoint: duplicate parameter '" + name + "'");
    ag::Var& v = model.params.get(name);
    if (v.rows() != m.rows() || v.cols() != m.cols()) throw Error("checkpoint: shape mismatch for '" + name + "'");
    v.mutable_value() = m;
  }
  for (const std::string& n : model.params.names())
    if (!seen.contains(n)) throw Error("checkpoint: missing parameter '" + n + "'");
}

void adam_step(nn::ParamStore& ps, const std::set<std::string>& trainable, AdamState& st, double lr, double beta1,
               double beta2, double eps) {
  ++st.t;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(st.t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(st.t));
  for (const std::string& n : ps.names()) {
    if (!trainable.contains(n)) continue;
    ag::Var& p = ps.get(n);
    const ag::Matrix g = p.grad();
    auto [mi, fresh] = st.m.try_emplace(n, ag::Matrix::Zero(p.rows(), p.cols()));
    ag::Matrix& m = mi->second;
    ag::Matrix& v = st.v.try_emplace(n, ag::Matrix::Zero(p.rows(), p.cols())).first->second;
    m = beta1 * m + (1.0 - beta1) * g;
    v = beta2 * v + (1.0 - beta2) * g.cwiseProduct(g);
    p.mutable_value().array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
}

std::vector<ScoredMap> predict(const Model& model, const Dataset& ds, const std::vector<std::size_t>& indices,
                               double score_threshold, int threads) {
  std::vector<ScoredMap> out(indices.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i; (i = next++) < indices.size();) {
      const ModelOutputs o = forward(model, ds.scenes.at(indices[i]).images);
      out[i] = predictions_to_map(o.decoder, model.grid, score_threshold);
    }
  };
  const int n = std::max(1, std::min<int>(threads, static_cast<int>(indices.size())));
  std::vector<std::jthread> pool;
  for (int t = 1; t < n; ++t) pool.emplace_back(work);
  work();
  return out;
}

int env_threads() {
  const char* s = std::getenv("MAPFM_THREADS");
  if (!s || !*s) return 1;
  char* end = nullptr;
  const long v = std::strtol(s, &end, 10);
  if (*end != '\0' || v < 1) throw Error(std::string("MAPFM_THREADS must be a positive integer, got '") + s + "'");
  return static_cast<int>(std::min(v, 256L));
}

namespace {

SplitResult evaluate_split(const Model& model, const Dataset& ds, std::vector<std::size_t> idx, const TrainConfig& cfg,
                           int threads, const fs::path& out_dir, const std::string& split) {
  SplitResult r;
  r.indices = std::move(idx);
  const std::vector<ScoredMap> preds = predict(model, ds, r.indices, cfg.score_threshold, threads);
  std::vector<VectorMap> gts;
  for (std::size_t i : r.indices) gts.push_back(ds.scenes[i].gt_map);
  r.report = evaluate(preds, gts, cfg.eval);
  if (!out_dir.empty()) {
    write_scored_maps(out_dir / ("pred_" + split + ".json"), preds);
    write_vector_maps(out_dir / ("gt_" + split + ".json"), gts);
    write_text(out_dir / ("eval_" + split + ".json"), report_to_json(r.report).dump(2) + "\n");
  }
  return r;
}

bool outputs_finite(const ModelOutputs& o) {
  for (const DecoderLayerOutput& l : o.decoder.layers)
    if (!l.class_logits.value().allFinite() || !l.points.value().allFinite()) return false;
  if (o.arss && !o.arss->logits.value().allFinite()) return false;
  if (!o.bev_lines.logits.value().allFinite()) return false;
  for (const SegLogits& s : o.pv_lanes)
    if (!s.logits.value().allFinite()) return false;
  return true;
}

void dump_nonfinite(const fs::path& out_dir, long step, const LossReport& r, const std::vector<std::size_t>& batch,
                    const Model& model) {
  ordered_json j;
  j["step"] = step;
  j["losses"] = report_json(step, r);
  j["batch"] = batch;
  json bad = json::array();
  for (const std::string& n : model.params.names()) {
    const ag::Var& p = model.params.get(n);
    if (!p.value().allFinite()) bad.push_back({{"name", n}, {"where", "value"}});
    else if (p.requires_grad() && !p.grad().allFinite()) bad.push_back({{"name", n}, {"where", "grad"}});
  }
  j["nonfinite_parameters"] = bad;
  write_text(out_dir / ("nonfinite_step_" + std::to_string(step) + ".json"), j.dump(2) + "\n");
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const fs::path& data_dir, const fs::path& out_dir, int threads) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const Dataset ds = load_dataset(data_dir);
  if (!(ds.grid == cfg.data.grid))
    throw Error("train: dataset grid " + grid_to_json(ds.grid).dump() + " differs from config grid " +
                grid_to_json(cfg.data.grid).dump());
  const std::size_t n = ds.scenes.size();
  const std::size_t n_val = static_cast<std::size_t>(std::floor(cfg.holdout_fraction * static_cast<double>(n)));
  if (n - n_val == 0) throw Error("train: no training scenes in " + data_dir.string());
  std::vector<std::size_t> train_idx(n - n_val), val_idx(n_val);
  std::iota(train_idx.begin(), train_idx.end(), 0);
  std::iota(val_idx.begin(), val_idx.end(), n - n_val);

  fs::create_directories(out_dir);
  Model model = make_model(cfg.model, ds.grid, ds.rig, cfg.seed);
  const std::set<std::string> trainable = trainable_set(model);
  for (const std::string& name : model.params.names())
    model.params.get(name).node()->requires_grad = trainable.contains(name);

  std::vector<LossTargets> targets;
  for (std::size_t i : train_idx)
    targets.push_back(make_targets(ds.scenes[i], ds.grid, cfg.model.decoder.points_per_element));

  TrainResult result;
  result.dataset_sha256 = dataset_sha256(data_dir);
  AdamState adam;
  std::mt19937_64 shuffle_rng(cfg.seed ^ 0x5DEECE66DULL);
  std::vector<std::size_t> order(train_idx.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  auto next_sample = [&] {
    if (cursor == order.size()) {
      for (std::size_t i = order.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(shuffle_rng() % i);
        std::swap(order[i - 1], order[j]);
      }
      cursor = 0;
    }
    return order[cursor++];
  };

  std::ofstream metrics(out_dir / "metrics.jsonl", std::ios::trunc);
  if (!metrics) throw Error("cannot write " + (out_dir / "metrics.jsonl").string());
  save_checkpoint(make_checkpoint(model, adam, 0, cfg, json::object()), out_dir / "ckpt_step_0.bin");

  const auto& val_or_train = val_idx.empty() ? train_idx : val_idx;
  LossReport last;
  for (long step = 1; step <= cfg.steps; ++step) {
    model.params.zero_grad();
    LossReport sum;
    std::vector<std::size_t> batch;
    const double inv = 1.0 / cfg.batch_size;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const std::size_t k = next_sample();
      batch.push_back(train_idx[k]);
      const ModelOutputs out = forward(model, ds.scenes[train_idx[k]].images);
      if (!outputs_finite(out)) {
        LossReport nan;
        nan.total = std::numeric_limits<double>::quiet_NaN();
        dump_nonfinite(out_dir, step, nan, batch, model);
        throw Error("train: non-finite model output at step " + std::to_string(step));
      }
      const LossResult lr = total_loss(out, targets[k], cfg.weights, cfg.match);
      if (!std::isfinite(lr.report.total)) {
        dump_nonfinite(out_dir, step, lr.report, batch, model);
        throw Error("train: non-finite loss at step " + std::to_string(step));
      }
      ag::backward(ag::scale(lr.total, inv));
      sum.l_pts += inv * lr.report.l_pts;
      sum.l_cls += inv * lr.report.l_cls;
      sum.l_dir += inv * lr.report.l_dir;
      sum.l_bevseg += inv * lr.report.l_bevseg;
      sum.l_pvseg += inv * lr.report.l_pvseg;
      sum.l_surf += inv * lr.report.l_surf;
      sum.total += inv * lr.report.total;
    }
    for (const std::string& name : trainable)
      if (!model.params.get(name).grad().allFinite()) {
        dump_nonfinite(out_dir, step, sum, batch, model);
        throw Error("train: non-finite gradient for '" + name + "' at step " + std::to_string(step));
      }
    adam_step(model.params, trainable, adam, cfg.learning_rate);
    if (step == 1) result.first = sum;
    last = sum;
    metrics << report_json(step, sum).dump() << '\n';
    metrics.flush();

    if (step % cfg.eval_every == 0 && step != cfg.steps) {
      const SplitResult ev = evaluate_split(model, ds, val_or_train, cfg, threads, {}, "");
      write_text(out_dir / ("eval_step_" + std::to_string(step) + ".json"), report_to_json(ev.report).dump(2) + "\n");
      save_checkpoint(make_checkpoint(model, adam, step, cfg, report_json(step, sum)),
                      out_dir / ("ckpt_step_" + std::to_string(step) + ".bin"));
    }
  }
  result.last = last;
  model.params.zero_grad();

  result.train = evaluate_split(model, ds, train_idx, cfg, threads, out_dir, "train");
  if (!val_idx.empty()) result.val = evaluate_split(model, ds, val_idx, cfg, threads, out_dir, "val");
  json final_metrics = report_json(cfg.steps, last);
  final_metrics["train_mAP"] = result.train.report.map;
  if (result.val) final_metrics["val_mAP"] = result.val->report.map;
  result.final_checkpoint = make_checkpoint(model, adam, cfg.steps, cfg, final_metrics);
  save_checkpoint(result.final_checkpoint, out_dir / "ckpt_final.bin");
  write_text(out_dir / "config.txt", config_to_text(cfg));

  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_text(out_dir / "timing.json", json{{"seconds", secs}, {"steps", cfg.steps}}.dump(2) + "\n");
  return result;
}

std::string_view to_string(AblationVariant v) {
  switch (v) {
    case AblationVariant::arss_on_off: return "arss_on_off";
    case AblationVariant::aggregation: return "aggregation";
    case AblationVariant::freeze_policy: return "freeze_policy";
  }
  return "?";
}

AblationVariant ablation_variant_from_string(std::string_view s) {
  for (auto v : {AblationVariant::arss_on_off, AblationVariant::aggregation, AblationVariant::freeze_policy})
    if (to_string(v) == s) return v;
  throw Error("unknown ablation variant '" + std::string(s) + "' (expected arss_on_off, aggregation or freeze_policy)");
}

namespace {

struct AblationRow {
  std::string key;
  std::string label;
  TrainConfig cfg;
};

std::string tap_list(const std::vector<int>& taps) {
  std::string s;
  for (std::size_t i = 0; i < taps.size(); ++i) s += (i ? ", " : "") + std::to_string(taps[i]);
  return s;
}

std::vector<AblationRow> ablation_rows(AblationVariant variant, const TrainConfig& base) {
  std::vector<AblationRow> rows;
  switch (variant) {
    case AblationVariant::arss_on_off: {
      TrainConfig off = base, on = base;
      off.model.arss_enabled = false;
      on.model.arss_enabled = true;
      rows.push_back({"arss_off", "Baseline", off});
      rows.push_back({"arss_on", "Baseline + ARSS", on});
      break;
    }
    case AblationVariant::aggregation: {
      const int b = base.model.backbone.num_blocks;
      std::vector<int> multi;
      for (int k = std::max(1, b - 2); k <= b; ++k) multi.push_back(k);
      TrainConfig last = base, cat = base, cnn = base;
      last.model.backbone.aggregation = Aggregation::last_layer;
      last.model.backbone.tap_blocks = {b};
      cat.model.backbone.aggregation = Aggregation::concat;
      cat.model.backbone.tap_blocks = multi;
      cnn.model.backbone.aggregation = Aggregation::multi_layer_cnn;
      cnn.model.backbone.tap_blocks = multi;
      rows.push_back({"last_layer", "Last Layer Features (" + std::to_string(b) + ")", last});
      rows.push_back({"concat", "Feature concatenation (" + tap_list(multi) + ")", cat});
      rows.push_back({"multi_layer_cnn", "Multi-layer CNN (" + tap_list(multi) + ")", cnn});
      break;
    }
    case AblationVariant::freeze_policy: {
      const std::pair<FreezePolicy, const char*> ps[] = {{FreezePolicy::frozen, "Frozen backbone"},
                                                        {FreezePolicy::finetune_last, "Fine-tune last block"},
                                                        {FreezePolicy::full, "Full fine-tuning"}};
      for (const auto& [p, label] : ps) {
        TrainConfig c = base;
        c.model.backbone.freeze_policy = p;
        rows.push_back({std::string(to_string(p)), label, c});
      }
      break;
    }
  }
  return rows;
}

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

json run_ablation(AblationVariant variant, const TrainConfig& base, const fs::path& out_dir, int threads) {
  base.validate();
  fs::create_directories(out_dir);
  fs::path data_dir = base.ablation.data;
  if (data_dir.empty()) {
    data_dir = out_dir / "data";
    DatasetConfig dc = base.data;
    dc.threads = std::max(dc.threads, threads);
    build_dataset(dc, base.ablation.num_scenes, data_dir);
  }
  const std::string sha = dataset_sha256(data_dir);
  const std::string vname(to_string(variant));

  ordered_json table;
  table["variant"] = vname;
  table["dataset"] = data_dir.string();
  table["dataset_sha256"] = sha;
  table["seeds"] = base.ablation.seeds;
  table["steps"] = base.steps;
  table["split"] = base.holdout_fraction > 0 ? "val" : "train";
  ordered_json rows = ordered_json::array();
  std::vector<std::vector<double>> row_maps;
  std::string text = "Ablation: " + vname + "\n";
  text += "dataset " + data_dir.string() + " sha256 " + sha + "\n";
  text += "seeds";
  for (int s : base.ablation.seeds) text += " " + std::to_string(s);
  text += "; metric: " + table["split"].get<std::string>() + " split AP, mean (std) over seeds\n\n";
  char head[160];
  std::snprintf(head, sizeof head, "%-36s %8s %8s %8s %8s %8s\n", "Method", "AP_div", "AP_ped", "AP_bound", "mAP",
                "mAP_std");
  text += head;

  for (const AblationRow& row : ablation_rows(variant, base)) {
    std::array<std::vector<double>, 3> per_class;
    std::vector<double> maps;
    ordered_json runs = ordered_json::array();
    for (int seed : base.ablation.seeds) {
      TrainConfig c = row.cfg;
      c.seed = static_cast<std::uint64_t>(seed);
      const fs::path run_dir = out_dir / vname / row.key / ("seed_" + std::to_string(seed));
      const TrainResult r = train(c, data_dir, run_dir, threads);
      const APReport& rep = r.val ? r.val->report : r.train.report;
      for (int k = 0; k < 3; ++k) per_class[k].push_back(rep.ap_class[k]);
      maps.push_back(rep.map);
      runs.push_back({{"seed", seed}, {"run_dir", run_dir.string()}, {"report", report_to_json(rep)}});
    }
    ordered_json rj;
    rj["key"] = row.key;
    rj["label"] = row.label;
    rj["ap_class_mean"] = {mean(per_class[0]), mean(per_class[1]), mean(per_class[2])};
    rj["mAP_mean"] = mean(maps);
    rj["mAP_std"] = stddev(maps);
    rj["mAP_per_seed"] = maps;
    rj["runs"] = runs;
    rows.push_back(rj);
    row_maps.push_back(maps);
    char line[200];
    std::snprintf(line, sizeof line, "%-36s %8.3f %8.3f %8.3f %8.3f %8.3f\n", row.label.c_str(), mean(per_class[0]),
                  mean(per_class[1]), mean(per_class[2]), mean(maps), stddev(maps));
    text += line;
  }
  table["rows"] = rows;
  if (variant == AblationVariant::arss_on_off) {
    std::vector<double> delta;
    for (std::size_t i = 0; i < row_maps[0].size(); ++i) delta.push_back(row_maps[1][i] - row_maps[0][i]);
    table["arss_delta_per_seed"] = delta;
    table["arss_delta_mean"] = mean(delta);
    table["arss_delta_std"] = stddev(delta);
    text += "\nARSS delta mAP (on - off): mean " + fmt("%+.4f", mean(delta)) + ", std " + fmt("%.4f", stddev(delta)) +
            ", per seed";
    for (double d : delta) text += " " + fmt("%+.4f", d);
    text += "\n";
  }
  write_text(out_dir / ("ablation_" + vname + ".json"), table.dump(2) + "\n");
  write_text(out_dir / ("ablation_" + vname + ".txt"), text);
  return table;
}

}  // namespace mapfm
