#pragma once

// Training loop (Adam, constant learning rate, deterministic shuffling),
// the single-file checkpoint format, split evaluation and the ablation
// harness that retrains one configuration axis at a time.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mapfm/config.hpp"
#include "mapfm/evaluator.hpp"
#include "mapfm/model.hpp"

namespace mapfm {

inline constexpr int kCheckpointVersion = 1;

struct AdamState {
  long t = 0;
  std::map<std::string, ag::Matrix> m;
  std::map<std::string, ag::Matrix> v;
};

struct Checkpoint {
  int format_version = kCheckpointVersion;
  long step = 0;
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json metrics = nlohmann::json::object();
  std::vector<std::pair<std::string, ag::Matrix>> params;  // registry order
  AdamState adam;
};

/// Layout: "MAPFMCKP", uint64 LE header length, JSON header, raw f64 LE payload.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint make_checkpoint(const Model& model, const AdamState& adam, long step, const TrainConfig& cfg,
                           nlohmann::json metrics);
/// Copies checkpoint tensors into the model; every parameter must appear exactly once.
void restore_parameters(Model& model, const Checkpoint& ckpt);

void adam_step(nn::ParamStore& ps, const std::set<std::string>& trainable, AdamState& st, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

/// Final-layer predictions for the given scenes; parallel over MAPFM_THREADS workers.
std::vector<ScoredMap> predict(const Model& model, const Dataset& ds, const std::vector<std::size_t>& indices,
                               double score_threshold, int threads = 1);

struct SplitResult {
  std::vector<std::size_t> indices;
  APReport report;
};

struct TrainResult {
  Checkpoint final_checkpoint;
  LossReport first;
  LossReport last;
  SplitResult train;
  std::optional<SplitResult> val;
  std::string dataset_sha256;
};

/// Writes metrics.jsonl, ckpt_step_<k>.bin, eval_step_<k>.json, ckpt_final.bin,
/// pred_<split>.json, gt_<split>.json and eval_<split>.json under out_dir.
TrainResult train(const TrainConfig& cfg, const std::filesystem::path& data_dir, const std::filesystem::path& out_dir,
                  int threads = 1);

enum class AblationVariant { arss_on_off, aggregation, freeze_policy };
std::string_view to_string(AblationVariant v);
AblationVariant ablation_variant_from_string(std::string_view s);

/// Writes ablation_<variant>.json and .txt; returns the JSON table.
nlohmann::json run_ablation(AblationVariant variant, const TrainConfig& base, const std::filesystem::path& out_dir,
                            int threads = 1);

/// Reads MAPFM_THREADS (default 1).
int env_threads();

}  // namespace mapfm
