#include "drumdiff/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "drumdiff/wav.hpp"

namespace drumdiff {

std::pair<double, double> curriculum_probs(int epoch, int total_epochs) {
  if (total_epochs <= 1) return {0.5, 1.0};
  const double f = static_cast<double>(epoch) / static_cast<double>(total_epochs - 1);
  return {1.0 - 0.5 * f, 0.5 + 0.5 * f};
}

ConditionChoice select_conditions(Rng& rng, const ConditionProbs& probs) {
  ConditionChoice c;
  c.target_view =
      rng.uniform() < probs.p_arr_target ? GridView::Arrangement : GridView::Tap;
  c.reference_view =
      rng.uniform() < probs.p_tap_reference ? GridView::Tap : GridView::Arrangement;
  c.blank_x_ref = rng.uniform() < probs.cfg_dropout;
  return c;
}

double lr_schedule(std::int64_t step, double base_lr, double gamma, double power) {
  return base_lr / std::pow(1.0 + gamma * static_cast<double>(step), power);
}

const TrackRecord& TrainerData::record(const std::string& id) const {
  return records[index_of(id)];
}

std::size_t TrainerData::index_of(const std::string& id) const {
  auto it = by_id.find(id);
  if (it == by_id.end()) throw DrumdiffError("unknown record id: " + id);
  return it->second;
}

TrainerData prepare_data(const std::vector<TrackRecord>& records,
                         const std::vector<KitTimbre>& kits) {
  TrainerData data;
  data.records = records;
  std::sort(data.records.begin(), data.records.end(),
            [](const TrackRecord& a, const TrackRecord& b) { return a.id() < b.id(); });
  std::map<std::string, const KitTimbre*> kit_by_id;
  for (const KitTimbre& k : kits) kit_by_id[k.kit_id] = &k;

  for (std::size_t i = 0; i < data.records.size(); ++i) {
    const TrackRecord& r = data.records[i];
    data.by_id[r.id()] = i;
    Waveform wave;
    if (!r.audio_path.empty()) {
      wave = read_wav(r.audio_path);
    } else {
      auto it = kit_by_id.find(r.kit_id);
      if (it == kit_by_id.end())
        throw DrumdiffError("no kit parameters for record " + r.id());
      auto git = r.grids.find(64);
      if (git == r.grids.end())
        throw DrumdiffError("record " + r.id() + " lacks the 64th-resolution grid");
      wave = render_grid(git->second, *it->second);
    }
    LatentSeq lat = pseudo_latent(wave);
    // truncate to the 2-bar segment (the render carries a release tail)
    const auto& any_grid = r.grids.begin()->second;
    const double segment = any_grid.step_seconds() * static_cast<double>(any_grid.rows());
    const std::size_t n_seg =
        static_cast<std::size_t>(std::floor(segment * kSampleRate / kLatentHop));
    if (lat.frames > n_seg) {
      lat.data.resize(n_seg * kLatentDim);
      lat.frames = n_seg;
    }
    data.raw_latents.push_back(std::move(lat));
    auto split = split_from_name(r.split);
    if (split == Split::Train) data.train_idx.push_back(i);
    if (split == Split::Validation) data.val_idx.push_back(i);
    if (split == Split::Test) data.test_idx.push_back(i);
  }
  if (data.train_idx.empty()) throw DrumdiffError("prepare_data: empty training split");

  data.latent_mean.assign(kLatentDim, 0.0);
  data.latent_std.assign(kLatentDim, 0.0);
  std::size_t n_frames = 0;
  for (std::size_t i : data.train_idx) n_frames += data.raw_latents[i].frames;
  for (std::size_t i : data.train_idx) {
    const LatentSeq& l = data.raw_latents[i];
    for (std::size_t f = 0; f < l.frames; ++f)
      for (int c = 0; c < kLatentDim; ++c) data.latent_mean[c] += l.at(f, c);
  }
  for (int c = 0; c < kLatentDim; ++c) data.latent_mean[c] /= static_cast<double>(n_frames);
  for (std::size_t i : data.train_idx) {
    const LatentSeq& l = data.raw_latents[i];
    for (std::size_t f = 0; f < l.frames; ++f)
      for (int c = 0; c < kLatentDim; ++c) {
        const double d = l.at(f, c) - data.latent_mean[c];
        data.latent_std[c] += d * d;
      }
  }
  for (int c = 0; c < kLatentDim; ++c)
    data.latent_std[c] = std::max(std::sqrt(data.latent_std[c] / n_frames), 1e-3);
  return data;
}

LatentSeq normalize_latent(const LatentSeq& raw, const TrainerData& data) {
  LatentSeq out(raw.frames);
  for (std::size_t f = 0; f < raw.frames; ++f)
    for (int c = 0; c < kLatentDim; ++c)
      out.at(f, c) = (raw.at(f, c) - data.latent_mean[c]) / data.latent_std[c];
  return out;
}

LatentSeq denormalize_latent(const LatentSeq& normalized, const TrainerData& data) {
  LatentSeq out(normalized.frames);
  for (std::size_t f = 0; f < normalized.frames; ++f)
    for (int c = 0; c < kLatentDim; ++c)
      out.at(f, c) = normalized.at(f, c) * data.latent_std[c] + data.latent_mean[c];
  return out;
}

Trainer::Trainer(DrumDit& model, const TrainerData& data, const TrainConfig& cfg)
    : model_(model), data_(data), cfg_(cfg) {
  // Fixed validation pairing: one reference per validation record, drawn
  // once from a dedicated stream so every epoch scores the same pairs.
  std::vector<TrackRecord> val_records;
  for (std::size_t i : data_.val_idx) val_records.push_back(data_.records[i]);
  SplitPolicy policy;
  for (const TrackRecord& r : val_records) {
    policy.kit_split[r.kit_id] = Split::Validation;
    policy.midi_split[r.midi_id] = Split::Validation;
  }
  policy.pair_mode = SplitPolicy::PairMode::SampleOne;
  Rng rng(Rng::derive(cfg_.seed, {0x76616cULL}));
  val_pairs_ = build_pairs(val_records, policy, &rng).pairs;
}

ConditionBundle Trainer::make_bundle(const PairRecord& pair, const ConditionChoice& choice,
                                     double t) const {
  const TrackRecord& tgt = data_.record(pair.target_id);
  const TrackRecord& ref = data_.record(pair.reference_id);
  if (tgt.kit_id != ref.kit_id)
    throw DrumdiffError("pair does not share a kit: " + pair.target_id + " / " +
                        pair.reference_id);
  ConditionBundle b;
  b.c_tgt = project(tgt.grids.at(cfg_.resolution), choice.target_view);
  b.c_ref = project(ref.grids.at(cfg_.resolution), choice.reference_view);
  if (!choice.blank_x_ref)
    b.x_ref = normalize_latent(data_.raw_latents[data_.index_of(pair.reference_id)], data_);
  b.duration_seconds =
      b.c_tgt.step_seconds() * static_cast<double>(b.c_tgt.rows());
  b.total_steps = static_cast<int>(b.c_tgt.rows());
  b.t = t;
  return b;
}

double Trainer::train_step(const std::vector<PairRecord>& batch, int epoch,
                           int item_base) {
  if (batch.empty()) throw DrumdiffError("train_step: empty batch");
  const auto [p_arr, p_tap] = curriculum_probs(epoch, cfg_.epochs);
  const ConditionProbs probs{p_arr, p_tap, cfg_.cfg_dropout};
  model_.params().zero_grad();
  double loss_acc = 0.0;
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const PairRecord& pair = batch[j];
    Rng rng(Rng::derive(cfg_.seed, {0x747261696eULL, static_cast<std::uint64_t>(epoch),
                                    static_cast<std::uint64_t>(item_base + j)}));
    const ConditionChoice choice = select_conditions(rng, probs);
    const double t = rng.uniform();
    ConditionBundle bundle = make_bundle(pair, choice, t);
    const LatentSeq z0_raw = data_.raw_latents[data_.index_of(pair.target_id)];
    Tensor z0 = latent_to_tensor(normalize_latent(z0_raw, data_));
    Tensor z1 = Tensor::randn(z0.shape(), rng);
    DiffusionPoint p = forward_diffusion(z0, z1, t);
    Tensor v_hat = model_.forward(p.z_t, bundle);
    Tensor loss = scale(v_loss(v_hat, p.v_target), 1.0 / static_cast<double>(batch.size()));
    if (!std::isfinite(loss.item()))
      throw DrumdiffError("train_step: non-finite loss on pair " + pair.target_id +
                          " <- " + pair.reference_id + " (t=" + std::to_string(t) + ")");
    loss.backward();
    loss_acc += loss.item();
  }
  AdamWConfig opt;
  opt.lr = lr_schedule(model_.params().step(), cfg_.lr, cfg_.inv_gamma, cfg_.inv_power);
  opt.weight_decay = cfg_.weight_decay;
  adamw_step(model_.params(), opt);
  return loss_acc;
}

std::vector<PairRecord> Trainer::epoch_pairs(int epoch) const {
  // Fresh reference sampling each epoch, from an epoch-derived stream.
  std::vector<TrackRecord> train_records;
  for (std::size_t i : data_.train_idx) train_records.push_back(data_.records[i]);
  SplitPolicy policy;
  for (const TrackRecord& r : train_records) {
    policy.kit_split[r.kit_id] = Split::Train;
    policy.midi_split[r.midi_id] = Split::Train;
  }
  policy.pair_mode = SplitPolicy::PairMode::SampleOne;
  Rng rng(Rng::derive(cfg_.seed, {0x70616972ULL, static_cast<std::uint64_t>(epoch)}));
  std::vector<PairRecord> pairs = build_pairs(train_records, policy, &rng).pairs;
  // Fisher-Yates shuffle with the same stream.
  for (std::size_t i = pairs.size(); i > 1; --i)
    std::swap(pairs[i - 1], pairs[rng.below(i)]);
  return pairs;
}

double Trainer::train_epoch(int epoch) {
  const std::vector<PairRecord> pairs = epoch_pairs(epoch);
  double loss_sum = 0.0;
  int n_batches = 0;
  for (std::size_t start = 0; start < pairs.size(); start += cfg_.batch_size) {
    const std::size_t end = std::min(pairs.size(), start + cfg_.batch_size);
    std::vector<PairRecord> batch(pairs.begin() + start, pairs.begin() + end);
    loss_sum += train_step(batch, epoch, static_cast<int>(start));
    ++n_batches;
  }
  return n_batches > 0 ? loss_sum / n_batches : 0.0;
}

double Trainer::validation_loss() const {
  if (val_pairs_.empty()) return 0.0;
  NoGradGuard no_grad;
  double acc = 0.0;
  for (std::size_t i = 0; i < val_pairs_.size(); ++i) {
    const PairRecord& pair = val_pairs_[i];
    Rng rng(Rng::derive(cfg_.seed, {0x76616c6cULL, static_cast<std::uint64_t>(i)}));
    // Inference-mode conditions, a fixed spread of diffusion times.
    const double t = (static_cast<double>(i) + 0.5) / static_cast<double>(val_pairs_.size());
    ConditionChoice choice;  // Arrangement target, Tap reference, no blank
    ConditionBundle bundle = make_bundle(pair, choice, t);
    Tensor z0 = latent_to_tensor(
        normalize_latent(data_.raw_latents[data_.index_of(pair.target_id)], data_));
    Tensor z1 = Tensor::randn(z0.shape(), rng);
    DiffusionPoint p = forward_diffusion(z0, z1, t);
    Tensor v_hat = model_.forward(p.z_t, bundle);
    acc += v_loss(v_hat, p.v_target).item();
  }
  return acc / static_cast<double>(val_pairs_.size());
}

nlohmann::json Trainer::checkpoint_meta(int epoch_done) const {
  nlohmann::json meta;
  meta["epoch_done"] = epoch_done;
  meta["train"] = {{"lr", cfg_.lr},
                   {"batch_size", cfg_.batch_size},
                   {"epochs", cfg_.epochs},
                   {"cfg_dropout", cfg_.cfg_dropout},
                   {"seed", cfg_.seed},
                   {"inv_gamma", cfg_.inv_gamma},
                   {"inv_power", cfg_.inv_power},
                   {"weight_decay", cfg_.weight_decay},
                   {"resolution", cfg_.resolution}};
  meta["latent_mean"] = data_.latent_mean;
  meta["latent_std"] = data_.latent_std;
  return meta;
}

EpochStats Trainer::run(const std::string& out_dir, const std::string& resume_from) {
  std::filesystem::create_directories(out_dir);
  int first_epoch = 0;
  if (!resume_from.empty()) {
    nlohmann::json meta = model_.load(resume_from);
    first_epoch = meta.value("epoch_done", -1) + 1;
  }
  const std::string log_path = out_dir + "/metrics.jsonl";
  std::ofstream log(log_path, first_epoch > 0 ? std::ios::app : std::ios::trunc);
  if (!log) throw DrumdiffError("cannot open metrics log: " + log_path);
  EpochStats stats;
  for (int epoch = first_epoch; epoch < cfg_.epochs; ++epoch) {
    stats.train_loss = train_epoch(epoch);
    stats.val_loss = validation_loss();
    stats.lr = lr_schedule(model_.params().step(), cfg_.lr, cfg_.inv_gamma, cfg_.inv_power);
    std::tie(stats.p_arr_target, stats.p_tap_reference) =
        curriculum_probs(epoch, cfg_.epochs);
    nlohmann::json line{{"epoch", epoch},
                        {"train_loss", stats.train_loss},
                        {"val_loss", stats.val_loss},
                        {"lr", stats.lr},
                        {"p_arr_target", stats.p_arr_target},
                        {"p_tap_reference", stats.p_tap_reference}};
    log << line.dump() << "\n";
    log.flush();
    model_.save(out_dir + "/ckpt_latest.ddt", checkpoint_meta(epoch));
  }
  model_.save(out_dir + "/ckpt_final.ddt", checkpoint_meta(cfg_.epochs - 1));
  return stats;
}

ConditionBundle inference_bundle(const TrainerData& data, const PairRecord& pair,
                                 int resolution) {
  const TrackRecord& tgt = data.record(pair.target_id);
  const TrackRecord& ref = data.record(pair.reference_id);
  ConditionBundle b;
  b.c_tgt = project(tgt.grids.at(resolution), GridView::Arrangement);
  b.c_ref = project(ref.grids.at(resolution), GridView::Tap);
  b.x_ref = normalize_latent(data.raw_latents[data.index_of(pair.reference_id)], data);
  b.duration_seconds = b.c_tgt.step_seconds() * static_cast<double>(b.c_tgt.rows());
  b.total_steps = static_cast<int>(b.c_tgt.rows());
  return b;
}

LatentSeq sample_pair(const DrumDit& model, const TrainerData& data,
                      const PairRecord& pair, int resolution, int steps,
                      double guidance_scale, SamplerKind sampler, std::uint64_t seed) {
  ConditionBundle bundle = inference_bundle(data, pair, resolution);
  const std::size_t n_frames =
      data.raw_latents[data.index_of(pair.target_id)].frames;
  LatentSeq z = sample(model, bundle, n_frames, steps, guidance_scale, sampler, seed);
  return denormalize_latent(z, data);
}

OnsetList grid_truth_onsets(const BinarizedGrid& grid) {
  OnsetList onsets;
  const double step = grid.step_seconds();
  for (std::size_t s = 0; s < grid.rows(); ++s)
    if (grid.at(s, 9)) onsets.push_back(static_cast<double>(s) * step);
  return onsets;
}

EvalSummary evaluate_pairs(const DrumDit& model, const TrainerData& data,
                           const std::vector<PairRecord>& pairs, int resolution,
                           int steps, double guidance_scale, SamplerKind sampler,
                           std::uint64_t seed, bool randomize_grids) {
  EvalSummary summary;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const PairRecord& pair = pairs[i];
    ConditionBundle bundle = inference_bundle(data, pair, resolution);
    if (randomize_grids) {
      Rng rng(Rng::derive(seed, {0x72616e64ULL, i}));
      const TrackRecord& tgt = data.record(pair.target_id);
      TempoMap tempo;
      tempo.bpm = tgt.bpm;
      const std::vector<DrumEvent> events = gen_pattern(rng, Style::Beat, tgt.bpm);
      bundle.c_tgt = binarize(events, tempo, resolution, tgt.bars);
    }
    const std::size_t tgt_idx = data.index_of(pair.target_id);
    const std::size_t n_frames = data.raw_latents[tgt_idx].frames;
    LatentSeq gen = denormalize_latent(
        sample(model, bundle, n_frames, steps, guidance_scale, sampler,
               Rng::derive(seed, {0x67656eULL, i})),
        data);
    const TrackRecord& tgt = data.record(pair.target_id);
    PairEval pe;
    pe.pair = pair;
    const OnsetList est = detect_onsets(gen);
    const OnsetList truth = grid_truth_onsets(tgt.grids.at(64));
    const OnsetScore f1 = onset_f1(est, truth, 0.100);
    pe.report.f1 = f1.f1;
    pe.report.precision = f1.precision;
    pe.report.recall = f1.recall;
    pe.report.est_onsets = static_cast<int>(est.size());
    pe.report.ref_onsets = static_cast<int>(truth.size());
    pe.report.rms_error_db = rms_error_db(gen, data.raw_latents[tgt_idx]);
    const Continuity cont =
        continuity_metrics(track_beats(gen), track_beats(data.raw_latents[tgt_idx]));
    pe.report.cmlt = cont.cmlt;
    pe.report.amlt = cont.amlt;
    summary.per_pair.push_back(std::move(pe));
  }
  for (const PairEval& pe : summary.per_pair) {
    summary.mean_f1 += pe.report.f1;
    summary.mean_rms += pe.report.rms_error_db;
    summary.mean_cmlt += pe.report.cmlt;
    summary.mean_amlt += pe.report.amlt;
  }
  if (!summary.per_pair.empty()) {
    const double n = static_cast<double>(summary.per_pair.size());
    summary.mean_f1 /= n;
    summary.mean_rms /= n;
    summary.mean_cmlt /= n;
    summary.mean_amlt /= n;
  }
  return summary;
}

}  // namespace drumdiff
