// drumdiff: MIDI-conditioned drum latent diffusion, desk-scale.
// Subcommands cover the whole pipeline: kit generation, SMF binarization,
// dataset construction, training, sampling, evaluation and the
// resolution-ablation sweep.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "drumdiff/dataset.hpp"
#include "drumdiff/metrics.hpp"
#include "drumdiff/midi.hpp"
#include "drumdiff/model.hpp"
#include "drumdiff/trainer.hpp"
#include "drumdiff/wav.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace drumdiff;

namespace {

struct VerificationFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DrumdiffError("cannot open: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DrumdiffError("cannot open for writing: " + path);
  out << text;
}

std::string sanitize(const std::string& id) {
  std::string s = id;
  for (char& c : s)
    if (c == '/') c = '-';
  return s;
}

std::string sample_file_name(const PairRecord& p) {
  return sanitize(p.target_id) + "__" + p.reference_midi + ".lat";
}

// Shared model/training options with config-file + flag override semantics.
struct RunOptions {
  TrainConfig train;
  DiTConfig model = DiTConfig::toy();
  bool toy = true;
  int sample_steps = 10;
  double guidance = 1.0;
  std::string sampler = "dpmpp2m";
  int threads = 0;
};

void add_run_options(CLI::App* cmd, RunOptions& opt, std::string& config_path) {
  cmd->add_option("--config", config_path, "JSON config file (flags override it)");
  cmd->add_option("--lr", opt.train.lr, "base learning rate");
  cmd->add_option("--batch-size", opt.train.batch_size, "items per optimizer step");
  cmd->add_option("--epochs", opt.train.epochs, "training epochs");
  cmd->add_option("--cfg-dropout", opt.train.cfg_dropout, "x_ref blank probability");
  cmd->add_option("--seed", opt.train.seed, "seed for all randomness");
  cmd->add_option("--inv-gamma", opt.train.inv_gamma, "InverseLR gamma");
  cmd->add_option("--inv-power", opt.train.inv_power, "InverseLR power");
  cmd->add_option("--weight-decay", opt.train.weight_decay, "AdamW weight decay");
  cmd->add_option("--resolution", opt.train.resolution, "grid resolution (16/32/64)");
  cmd->add_option("--steps", opt.sample_steps, "sampling steps");
  cmd->add_option("--guidance", opt.guidance, "classifier-free guidance scale");
  cmd->add_option("--sampler", opt.sampler, "ddim | dpmpp2m");
  cmd->add_flag("--toy,!--full", opt.toy, "toy model preset (default) or full-size");
  cmd->add_option("--layers", opt.model.layers, "transformer depth");
  cmd->add_option("--d-model", opt.model.d_model, "model width");
  cmd->add_option("--heads", opt.model.heads, "attention heads");
  cmd->add_option("--threads", opt.threads, "cap worker threads (0 = library default)");
}

void finalize_run_options(CLI::App* cmd, RunOptions& opt, const std::string& config_path) {
  if (!config_path.empty()) {
    const json cfg = json::parse(read_file(config_path));
    auto override_if_unset = [&](const char* flag, auto& target, const char* key) {
      if (cmd->count(flag) == 0 && cfg.contains(key))
        target = cfg.at(key).get<std::decay_t<decltype(target)>>();
    };
    override_if_unset("--lr", opt.train.lr, "lr");
    override_if_unset("--batch-size", opt.train.batch_size, "batch_size");
    override_if_unset("--epochs", opt.train.epochs, "epochs");
    override_if_unset("--cfg-dropout", opt.train.cfg_dropout, "cfg_dropout");
    override_if_unset("--seed", opt.train.seed, "seed");
    override_if_unset("--inv-gamma", opt.train.inv_gamma, "inv_gamma");
    override_if_unset("--inv-power", opt.train.inv_power, "inv_power");
    override_if_unset("--weight-decay", opt.train.weight_decay, "weight_decay");
    override_if_unset("--resolution", opt.train.resolution, "resolution");
    override_if_unset("--steps", opt.sample_steps, "steps");
    override_if_unset("--guidance", opt.guidance, "guidance");
    override_if_unset("--sampler", opt.sampler, "sampler");
    override_if_unset("--layers", opt.model.layers, "layers");
    override_if_unset("--d-model", opt.model.d_model, "d_model");
    override_if_unset("--heads", opt.model.heads, "heads");
  }
  if (!opt.toy) {
    DiTConfig full;
    if (cmd->count("--layers") == 0) opt.model.layers = full.layers;
    if (cmd->count("--d-model") == 0) opt.model.d_model = full.d_model;
    if (cmd->count("--heads") == 0) opt.model.heads = full.heads;
  }
#ifdef _OPENMP
  if (opt.threads > 0) omp_set_num_threads(opt.threads);
#endif
}

std::vector<KitTimbre> load_kits(const std::string& path) {
  return kits_from_json(read_file(path));
}

TrainerData load_data(const std::string& tracks_path, const std::string& kits_path) {
  return prepare_data(tracks_from_jsonl(read_file(tracks_path)), load_kits(kits_path));
}

// ---- subcommands ----

int cmd_make_kits(const std::string& out, int n, std::uint64_t seed) {
  std::vector<KitTimbre> kits;
  for (int i = 0; i < n; ++i) {
    char name[16];
    std::snprintf(name, sizeof(name), "k%02d", i);
    kits.push_back(random_kit(name, Rng::derive(seed, {0x6b6974ULL, static_cast<std::uint64_t>(i)})));
  }
  write_file(out, kits_to_json(kits));
  std::cout << "wrote " << n << " kits to " << out << "\n";
  return 0;
}

int cmd_binarize(const std::string& in, const std::string& out, double bpm_override,
                 int resolution, int bars, const std::string& binary_out) {
  ParsedSmf parsed = parse_smf_file(in);
  TempoMap tempo = parsed.tempo;
  if (bpm_override > 0.0) tempo.bpm = bpm_override;
  BinarizeStats stats;
  BinarizedGrid grid = binarize(parsed.events, tempo, resolution, bars, &stats);
  write_file(out, grid_to_json(grid));
  if (!binary_out.empty()) {
    const auto bytes = grid_to_binary(grid);
    std::ofstream bo(binary_out, std::ios::binary | std::ios::trunc);
    bo.write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
  }
  json info{{"steps", grid.rows()},
            {"bpm", grid.bpm},
            {"events", parsed.events.size()},
            {"unmapped_notes", parsed.unmapped_notes},
            {"dropped_out_of_range", stats.dropped_out_of_range}};
  std::cout << info.dump() << "\n";
  return 0;
}

int cmd_build_dataset(const std::string& kits_path, const std::string& out_dir,
                      CorpusConfig corpus) {
  const std::vector<KitTimbre> kits = load_kits(kits_path);
  corpus.n_kits = static_cast<int>(kits.size());
  SyntheticCorpus built = build_synthetic_corpus(corpus);
  fs::create_directories(out_dir);
  write_file(out_dir + "/tracks.jsonl", tracks_to_jsonl(built.records));
  SplitPolicy enumerate = built.policy;
  enumerate.pair_mode = SplitPolicy::PairMode::EnumerateAll;
  PairingResult pairing = build_pairs(built.records, enumerate);
  SplitReport report = verify_splits(pairing.pairs);
  write_file(out_dir + "/pairs.jsonl", pairs_to_jsonl(pairing.pairs));
  json summary{{"records", built.records.size()},
               {"pairs", pairing.pairs.size()},
               {"unpaired", pairing.unpaired.size()},
               {"violations", report.violations}};
  write_file(out_dir + "/dataset_report.json", summary.dump(2));
  std::cout << summary.dump() << "\n";
  if (!report.ok())
    throw VerificationFailure("split verification failed: " + report.violations.front());
  return 0;
}

int cmd_train(const std::string& tracks, const std::string& kits,
              const std::string& out_dir, const RunOptions& opt,
              const std::string& resume) {
  TrainerData data = load_data(tracks, kits);
  // refuse to start on a leaking manifest
  std::vector<TrackRecord> usable;
  for (const TrackRecord& r : data.records)
    if (r.split != "unused") usable.push_back(r);
  SplitPolicy policy;
  for (const TrackRecord& r : usable) {
    auto s = split_from_name(r.split);
    if (!s) continue;
    policy.kit_split[r.kit_id] = *s;
    policy.midi_split[r.midi_id] = *s;
  }
  SplitReport report = verify_splits(build_pairs(usable, policy).pairs);
  if (!report.ok())
    throw VerificationFailure("manifest failed split verification: " +
                              report.violations.front());

  DrumDit model(opt.model, opt.train.seed);
  Trainer trainer(model, data, opt.train);
  EpochStats last = trainer.run(out_dir, resume);
  json out{{"final_train_loss", last.train_loss},
           {"final_val_loss", last.val_loss},
           {"checkpoint", out_dir + "/ckpt_final.ddt"}};
  std::cout << out.dump() << "\n";
  return 0;
}

int cmd_sample(const std::string& tracks, const std::string& kits,
               const std::string& pairs_path, const std::string& ckpt,
               const std::string& out_dir, const std::string& split,
               const RunOptions& opt) {
  TrainerData data = load_data(tracks, kits);
  DrumDit model(opt.model, opt.train.seed);
  const json meta = model.load(ckpt);
  if (meta.contains("latent_mean")) {
    data.latent_mean = meta["latent_mean"].get<std::vector<double>>();
    data.latent_std = meta["latent_std"].get<std::vector<double>>();
  }
  const int resolution = meta.contains("train")
                             ? meta["train"].value("resolution", opt.train.resolution)
                             : opt.train.resolution;
  fs::create_directories(out_dir);
  const std::vector<KitTimbre> kit_list = load_kits(kits);
  std::map<std::string, const KitTimbre*> kit_by_id;
  for (const KitTimbre& k : kit_list) kit_by_id[k.kit_id] = &k;
  int count = 0;
  for (const PairRecord& p : pairs_from_jsonl(read_file(pairs_path))) {
    if (p.split != split) continue;
    LatentSeq gen = sample_pair(model, data, p, resolution, opt.sample_steps,
                                opt.guidance, sampler_from_name(opt.sampler),
                                Rng::derive(opt.train.seed, {0x736d70ULL,
                                            static_cast<std::uint64_t>(count)}));
    json lat_meta{{"target", p.target_id},
                  {"reference", p.reference_id},
                  {"resolution", resolution},
                  {"frames", gen.frames}};
    save_tensor_file(out_dir + "/" + sample_file_name(p),
                     {{"latent", &gen.data}},
                     {{gen.frames, static_cast<std::size_t>(kLatentDim)}}, lat_meta);
    // preview render of the conditioning grid for listening
    const TrackRecord& tgt = data.record(p.target_id);
    auto kit_it = kit_by_id.find(tgt.kit_id);
    if (kit_it != kit_by_id.end()) {
      write_wav(out_dir + "/" + sanitize(p.target_id) + "_grid_preview.wav",
                render_grid(tgt.grids.at(64), *kit_it->second));
    }
    ++count;
  }
  std::cout << json{{"sampled", count}, {"out_dir", out_dir}}.dump() << "\n";
  return 0;
}

int cmd_evaluate(const std::string& tracks, const std::string& kits,
                 const std::string& pairs_path, const std::string& samples_dir,
                 const std::string& split, const std::string& out_path) {
  TrainerData data = load_data(tracks, kits);
  std::vector<PairRecord> pairs;
  for (const PairRecord& p : pairs_from_jsonl(read_file(pairs_path)))
    if (p.split == split) pairs.push_back(p);
  json lines = json::array();
  double mean_f1 = 0, mean_rms = 0, mean_cmlt = 0, mean_amlt = 0;
  int n = 0;
  for (const PairRecord& p : pairs) {
    const std::string lat_path = samples_dir + "/" + sample_file_name(p);
    if (!fs::exists(lat_path)) continue;
    TensorFile tf = load_tensor_file(lat_path);
    const auto* entry = tf.find("latent");
    if (!entry) throw DrumdiffError("no latent tensor in " + lat_path);
    LatentSeq gen(entry->shape.at(0));
    gen.data = entry->data;
    const TrackRecord& tgt = data.record(p.target_id);
    const std::size_t tgt_idx = data.index_of(p.target_id);
    MetricsReport rep;
    const OnsetList est = detect_onsets(gen);
    const OnsetList truth = grid_truth_onsets(tgt.grids.at(64));
    const OnsetScore f1 = onset_f1(est, truth, 0.100);
    rep.f1 = f1.f1;
    rep.precision = f1.precision;
    rep.recall = f1.recall;
    rep.est_onsets = static_cast<int>(est.size());
    rep.ref_onsets = static_cast<int>(truth.size());
    rep.rms_error_db = rms_error_db(gen, data.raw_latents[tgt_idx]);
    const Continuity cont =
        continuity_metrics(track_beats(gen), track_beats(data.raw_latents[tgt_idx]));
    rep.cmlt = cont.cmlt;
    rep.amlt = cont.amlt;
    json line = rep.to_json();
    line["target"] = p.target_id;
    line["reference"] = p.reference_id;
    lines.push_back(line);
    mean_f1 += rep.f1;
    mean_rms += rep.rms_error_db;
    mean_cmlt += rep.cmlt;
    mean_amlt += rep.amlt;
    ++n;
  }
  if (n == 0) throw DrumdiffError("no sampled latents found in " + samples_dir);
  json aggregate{{"pairs", n},
                 {"f1", mean_f1 / n},
                 {"rms_error_db", mean_rms / n},
                 {"cmlt", mean_cmlt / n},
                 {"amlt", mean_amlt / n}};
  std::ostringstream out;
  for (const auto& line : lines) out << line.dump() << "\n";
  out << json{{"aggregate", aggregate}}.dump() << "\n";
  write_file(out_path, out.str());
  std::cout << aggregate.dump() << "\n";
  return 0;
}

int cmd_ablate(const std::string& kits_path, const std::string& out_dir,
               CorpusConfig corpus, const RunOptions& opt) {
  const std::vector<KitTimbre> kits = load_kits(kits_path);
  corpus.n_kits = static_cast<int>(kits.size());
  SyntheticCorpus built = build_synthetic_corpus(corpus);
  TrainerData data = prepare_data(built.records, kits);
  SplitPolicy test_policy = built.policy;
  test_policy.pair_mode = SplitPolicy::PairMode::SampleOne;
  Rng pair_rng(Rng::derive(opt.train.seed, {0x4142ULL}));
  std::vector<PairRecord> test_pairs;
  for (const PairRecord& p : build_pairs(built.records, test_policy, &pair_rng).pairs)
    if (p.split == "test") test_pairs.push_back(p);

  fs::create_directories(out_dir);
  json rows = json::array();
  for (int res : {16, 32, 64}) {
    RunOptions ropt = opt;
    ropt.train.resolution = res;
    DrumDit model(ropt.model, ropt.train.seed);
    Trainer trainer(model, data, ropt.train);
    EpochStats last = trainer.run(out_dir + "/res" + std::to_string(res));
    EvalSummary ev = evaluate_pairs(model, data, test_pairs, res, ropt.sample_steps,
                                    ropt.guidance, sampler_from_name(ropt.sampler),
                                    ropt.train.seed);
    json row{{"resolution", res},
             {"f1", ev.mean_f1},
             {"rms_error_db", ev.mean_rms},
             {"cmlt", ev.mean_cmlt},
             {"amlt", ev.mean_amlt},
             {"final_val_loss", last.val_loss}};
    rows.push_back(row);
    std::cout << row.dump() << "\n";
  }
  json summary{{"rows", rows}};
  write_file(out_dir + "/ablation_summary.json", summary.dump(2));
  std::cout << "resolution   F1      RMSerr  CMLt    AMLt\n";
  for (const auto& row : rows) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%4dth      %6.3f  %6.2f  %6.3f  %6.3f\n",
                  row["resolution"].get<int>(), row["f1"].get<double>(),
                  row["rms_error_db"].get<double>(), row["cmlt"].get<double>(),
                  row["amlt"].get<double>());
    std::cout << buf;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MIDI-conditioned drum latent diffusion, desk scale"};
  app.require_subcommand(1);

  // make-kits
  auto* mk = app.add_subcommand("make-kits", "generate synthetic drum kit manifests");
  std::string mk_out = "kits.json";
  int mk_n = 4;
  std::uint64_t mk_seed = 7;
  mk->add_option("--out", mk_out, "output kits.json");
  mk->add_option("--n", mk_n, "number of kits");
  mk->add_option("--seed", mk_seed, "kit seed");

  // binarize
  auto* bz = app.add_subcommand("binarize", "convert an SMF file to a grid JSON");
  std::string bz_in, bz_out = "grid.json", bz_bin;
  double bz_bpm = 0.0;
  int bz_res = 64, bz_bars = 2;
  bz->add_option("--in", bz_in, "input .mid file")->required();
  bz->add_option("--out", bz_out, "output grid json");
  bz->add_option("--binary-out", bz_bin, "also write the compact binary grid");
  bz->add_option("--bpm", bz_bpm, "override the file tempo");
  bz->add_option("--resolution", bz_res, "16 | 32 | 64");
  bz->add_option("--bars", bz_bars, "bars in the grid");

  // build-dataset
  auto* bd = app.add_subcommand("build-dataset", "build a synthetic 2-bar pair corpus");
  std::string bd_kits = "kits.json", bd_out = "dataset";
  CorpusConfig bd_corpus;
  bd->add_option("--kits", bd_kits, "kits manifest");
  bd->add_option("--out-dir", bd_out, "output directory");
  bd->add_option("--patterns", bd_corpus.n_patterns, "number of MIDI patterns");
  bd->add_option("--bpm", bd_corpus.bpm, "corpus tempo");
  bd->add_option("--seed", bd_corpus.seed, "pattern seed");
  bd->add_option("--val-kits", bd_corpus.val_kits, "kits held out for validation");
  bd->add_option("--test-kits", bd_corpus.test_kits, "kits held out for test");
  bd->add_option("--val-midis", bd_corpus.val_midis, "patterns held out for validation");
  bd->add_option("--test-midis", bd_corpus.test_midis, "patterns held out for test");

  // train
  auto* tr = app.add_subcommand("train", "train the model on a dataset");
  std::string tr_tracks = "dataset/tracks.jsonl", tr_kits = "kits.json";
  std::string tr_out = "run", tr_resume, tr_config;
  RunOptions tr_opt;
  tr->add_option("--tracks", tr_tracks, "tracks manifest");
  tr->add_option("--kits", tr_kits, "kits manifest");
  tr->add_option("--out-dir", tr_out, "run directory");
  tr->add_option("--resume", tr_resume, "checkpoint to resume from");
  add_run_options(tr, tr_opt, tr_config);

  // sample
  auto* sm = app.add_subcommand("sample", "sample latents for manifest pairs");
  std::string sm_tracks = "dataset/tracks.jsonl", sm_kits = "kits.json";
  std::string sm_pairs = "dataset/pairs.jsonl", sm_ckpt = "run/ckpt_final.ddt";
  std::string sm_out = "samples", sm_split = "test", sm_config;
  RunOptions sm_opt;
  sm->add_option("--tracks", sm_tracks, "tracks manifest");
  sm->add_option("--kits", sm_kits, "kits manifest");
  sm->add_option("--pairs", sm_pairs, "pairs manifest");
  sm->add_option("--ckpt", sm_ckpt, "model checkpoint");
  sm->add_option("--out-dir", sm_out, "output directory");
  sm->add_option("--split", sm_split, "split to sample");
  add_run_options(sm, sm_opt, sm_config);

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "score sampled latents against targets");
  std::string ev_tracks = "dataset/tracks.jsonl", ev_kits = "kits.json";
  std::string ev_pairs = "dataset/pairs.jsonl", ev_samples = "samples";
  std::string ev_split = "test", ev_out = "report.jsonl";
  ev->add_option("--tracks", ev_tracks, "tracks manifest");
  ev->add_option("--kits", ev_kits, "kits manifest");
  ev->add_option("--pairs", ev_pairs, "pairs manifest");
  ev->add_option("--samples-dir", ev_samples, "directory with sampled latents");
  ev->add_option("--split", ev_split, "split to score");
  ev->add_option("--out", ev_out, "report output (jsonl)");

  // ablate-resolution
  auto* ab = app.add_subcommand("ablate-resolution",
                                "train and evaluate one model per grid resolution");
  std::string ab_kits = "kits.json", ab_out = "ablation", ab_config;
  CorpusConfig ab_corpus;
  RunOptions ab_opt;
  ab->add_option("--kits", ab_kits, "kits manifest");
  ab->add_option("--out-dir", ab_out, "output directory");
  ab->add_option("--patterns", ab_corpus.n_patterns, "number of MIDI patterns");
  ab->add_option("--bpm", ab_corpus.bpm, "corpus tempo");
  ab->add_option("--corpus-seed", ab_corpus.seed, "pattern seed");
  add_run_options(ab, ab_opt, ab_config);

  CLI11_PARSE(app, argc, argv);

  try {
    if (mk->parsed()) return cmd_make_kits(mk_out, mk_n, mk_seed);
    if (bz->parsed()) return cmd_binarize(bz_in, bz_out, bz_bpm, bz_res, bz_bars, bz_bin);
    if (bd->parsed()) return cmd_build_dataset(bd_kits, bd_out, bd_corpus);
    if (tr->parsed()) {
      finalize_run_options(tr, tr_opt, tr_config);
      return cmd_train(tr_tracks, tr_kits, tr_out, tr_opt, tr_resume);
    }
    if (sm->parsed()) {
      finalize_run_options(sm, sm_opt, sm_config);
      return cmd_sample(sm_tracks, sm_kits, sm_pairs, sm_ckpt, sm_out, sm_split, sm_opt);
    }
    if (ev->parsed())
      return cmd_evaluate(ev_tracks, ev_kits, ev_pairs, ev_samples, ev_split, ev_out);
    if (ab->parsed()) {
      finalize_run_options(ab, ab_opt, ab_config);
      return cmd_ablate(ab_kits, ab_out, ab_corpus, ab_opt);
    }
  } catch (const VerificationFailure& e) {
    std::cerr << json{{"error", e.what()}, {"kind", "verification"}}.dump() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", e.what()}, {"kind", "input"}}.dump() << "\n";
    return 1;
  }
  return 0;
}
