#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "drumdiff/dataset.hpp"
#include "drumdiff/metrics.hpp"
#include "drumdiff/model.hpp"
#include "drumdiff/synth.hpp"

namespace drumdiff {

struct TrainConfig {
  double lr = 1e-4;
  int batch_size = 4;
  int epochs = 50;
  double cfg_dropout = 0.10;
  std::uint64_t seed = 0;
  double inv_gamma = 1e-3;  // InverseLR: lr / (1 + gamma * step)^power
  double inv_power = 1.0;
  double weight_decay = 1e-4;
  int resolution = 64;
};

struct CurriculumState {
  int epoch = 0;
  int total_epochs = 1;
  double p_arr_target = 1.0;
  double p_tap_reference = 0.5;
};

// Linear schedule over [0, total_epochs-1]: the target condition moves from
// always-Arrangement to a 50/50 split, the reference from 50/50 to always-Tap.
// total_epochs == 1 jumps straight to the final values.
std::pair<double, double> curriculum_probs(int epoch, int total_epochs);

struct ConditionProbs {
  double p_arr_target = 1.0;
  double p_tap_reference = 0.5;
  double cfg_dropout = 0.10;
};

struct ConditionChoice {
  GridView target_view = GridView::Arrangement;
  GridView reference_view = GridView::Tap;
  bool blank_x_ref = false;
};

// Draw order is frozen: target view, reference view, blank flag.
ConditionChoice select_conditions(Rng& rng, const ConditionProbs& probs);

double lr_schedule(std::int64_t step, double base_lr, double gamma, double power);

// In-memory corpus: records plus raw pseudo-latents (truncated to the 2-bar
// segment) and the train-split normalization statistics.
struct TrainerData {
  std::vector<TrackRecord> records;
  std::map<std::string, std::size_t> by_id;
  std::vector<LatentSeq> raw_latents;
  std::vector<double> latent_mean, latent_std;  // per channel
  std::vector<std::size_t> train_idx, val_idx, test_idx;

  const TrackRecord& record(const std::string& id) const;
  std::size_t index_of(const std::string& id) const;
};

// Renders each record with its kit (or loads its audio file), computes the
// pseudo-latents and the train-split channel statistics.
TrainerData prepare_data(const std::vector<TrackRecord>& records,
                         const std::vector<KitTimbre>& kits);

LatentSeq normalize_latent(const LatentSeq& raw, const TrainerData& data);
LatentSeq denormalize_latent(const LatentSeq& normalized, const TrainerData& data);

struct EpochStats {
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
  double p_arr_target = 0.0;
  double p_tap_reference = 0.0;
};

class Trainer {
 public:
  Trainer(DrumDit& model, const TrainerData& data, const TrainConfig& cfg);

  // One optimizer step over a batch of pairs. Loss is averaged over items;
  // rng streams are derived from (seed, epoch, item) so batches are
  // order-independent and runs reproducible.
  double train_step(const std::vector<PairRecord>& batch, int epoch, int item_base);

  double train_epoch(int epoch);
  double validation_loss() const;

  // Full loop: per-epoch curriculum, per-epoch reference resampling,
  // validation, JSONL metrics log and checkpointing. Returns the stats of
  // the final epoch. If resume_from is non-empty, continues from that
  // checkpoint and reproduces the uninterrupted run exactly.
  EpochStats run(const std::string& out_dir, const std::string& resume_from = "");

  const TrainConfig& config() const { return cfg_; }
  nlohmann::json checkpoint_meta(int epoch_done) const;

 private:
  std::vector<PairRecord> epoch_pairs(int epoch) const;
  ConditionBundle make_bundle(const PairRecord& pair, const ConditionChoice& choice,
                              double t) const;
  friend struct TrainerTestAccess;

  DrumDit& model_;
  const TrainerData& data_;
  TrainConfig cfg_;
  std::vector<PairRecord> val_pairs_;
};

// Inference-mode conditions: Arrangement target, Tap reference, x_ref given.
ConditionBundle inference_bundle(const TrainerData& data, const PairRecord& pair,
                                 int resolution);

// Sample one pair and return the denormalized latent sequence.
LatentSeq sample_pair(const DrumDit& model, const TrainerData& data,
                      const PairRecord& pair, int resolution, int steps,
                      double guidance_scale, SamplerKind sampler, std::uint64_t seed);

// Onset times implied by a grid's global-onset column.
OnsetList grid_truth_onsets(const BinarizedGrid& grid);

struct PairEval {
  PairRecord pair;
  MetricsReport report;
};

struct EvalSummary {
  std::vector<PairEval> per_pair;
  double mean_f1 = 0.0, mean_rms = 0.0, mean_cmlt = 0.0, mean_amlt = 0.0;
};

// Sample + score every pair: onset F1 of the generated latents against the
// target grid truth, latent RMS envelope error and beat continuity against
// the rendered target. With randomize_grids the target conditioning grid is
// replaced by a freshly generated random pattern (the lower-bound baseline).
EvalSummary evaluate_pairs(const DrumDit& model, const TrainerData& data,
                           const std::vector<PairRecord>& pairs, int resolution,
                           int steps, double guidance_scale, SamplerKind sampler,
                           std::uint64_t seed, bool randomize_grids = false);

}  // namespace drumdiff
