#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "drumdiff/trainer.hpp"

using namespace drumdiff;

namespace {

struct ToySetup {
  std::vector<KitTimbre> kits;
  TrainerData data;
  CorpusConfig corpus;
};

// Small corpus: 3 kits x 10 patterns so tests stay fast.
ToySetup toy_setup() {
  ToySetup s;
  s.corpus.n_kits = 3;
  s.corpus.n_patterns = 10;
  s.corpus.val_kits = 1;
  s.corpus.test_kits = 1;
  s.corpus.val_midis = 2;
  s.corpus.test_midis = 2;
  s.corpus.seed = 5;
  for (int i = 0; i < s.corpus.n_kits; ++i)
    s.kits.push_back(random_kit("k0" + std::to_string(i), 100 + i));
  SyntheticCorpus corpus = build_synthetic_corpus(s.corpus);
  s.data = prepare_data(corpus.records, s.kits);
  return s;
}

DiTConfig micro_model() {
  DiTConfig c = DiTConfig::toy();
  c.layers = 1;
  c.d_model = 16;
  c.heads = 2;
  c.mlp_ratio = 2.0;
  c.content_self_layers = 1;
  c.content_cross_layers = 1;
  c.max_steps = 128;
  return c;
}

TrainConfig quick_train(int epochs) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 4;
  t.seed = 11;
  t.resolution = 16;
  return t;
}

}  // namespace

TEST_CASE("curriculum endpoints match the schedule contract") {
  auto [a0, t0] = curriculum_probs(0, 50);
  CHECK(a0 == doctest::Approx(1.0));
  CHECK(t0 == doctest::Approx(0.5));
  auto [a1, t1] = curriculum_probs(49, 50);
  CHECK(a1 == doctest::Approx(0.5));
  CHECK(t1 == doctest::Approx(1.0));
  auto [am, tm] = curriculum_probs(5, 11);
  CHECK(am == doctest::Approx(0.75));
  CHECK(tm == doctest::Approx(0.75));
  // single-epoch runs jump to the final values
  auto [as, ts] = curriculum_probs(0, 1);
  CHECK(as == doctest::Approx(0.5));
  CHECK(ts == doctest::Approx(1.0));
}

TEST_CASE("curriculum endpoints hold for any total_epochs >= 2, monotone inside") {
  for (int total : {2, 3, 7, 50, 123}) {
    auto [a0, t0] = curriculum_probs(0, total);
    CHECK(a0 == doctest::Approx(1.0));
    CHECK(t0 == doctest::Approx(0.5));
    auto [af, tf] = curriculum_probs(total - 1, total);
    CHECK(af == doctest::Approx(0.5));
    CHECK(tf == doctest::Approx(1.0));
    double prev_a = 2.0, prev_t = -1.0;
    for (int e = 0; e < total; ++e) {
      auto [a, t] = curriculum_probs(e, total);
      CHECK(a <= prev_a + 1e-12);
      CHECK(t >= prev_t - 1e-12);
      prev_a = a;
      prev_t = t;
    }
  }
}

TEST_CASE("select_conditions honours degenerate probabilities") {
  Rng rng(1);
  ConditionProbs probs{1.0, 1.0, 0.0};
  for (int i = 0; i < 100; ++i) {
    ConditionChoice c = select_conditions(rng, probs);
    CHECK(c.target_view == GridView::Arrangement);
    CHECK(c.reference_view == GridView::Tap);
    CHECK_FALSE(c.blank_x_ref);
  }
}

TEST_CASE("cfg blank frequency is 0.10 +- 0.01 over 10000 draws") {
  Rng rng(2);
  ConditionProbs probs{0.7, 0.7, 0.10};
  int blanks = 0;
  for (int i = 0; i < 10000; ++i)
    if (select_conditions(rng, probs).blank_x_ref) ++blanks;
  const double freq = blanks / 10000.0;
  CHECK(freq == doctest::Approx(0.10).epsilon(0.1));
  CHECK(std::abs(freq - 0.10) <= 0.01);
}

TEST_CASE("lr_schedule formula") {
  CHECK(lr_schedule(0, 1e-4, 1e-3, 1.0) == doctest::Approx(1e-4));
  CHECK(lr_schedule(1000, 1e-4, 0.0, 1.0) == doctest::Approx(1e-4));
  CHECK(lr_schedule(9, 1e-4, 1.0, 1.0) == doctest::Approx(1e-5));
}

TEST_CASE("prepare_data: latents, splits and normalization stats") {
  ToySetup s = toy_setup();
  CHECK(s.data.records.size() == 30);
  CHECK(s.data.train_idx.size() == 6);  // 1 train kit x 6 train midis
  CHECK(s.data.val_idx.size() == 2);
  CHECK(s.data.test_idx.size() == 2);
  // latents truncated to the 2-bar segment at 120 BPM
  for (const LatentSeq& l : s.data.raw_latents) CHECK(l.frames == 86);
  // normalized train latents have roughly zero mean per channel
  double mean_acc = 0.0;
  std::size_t count = 0;
  for (std::size_t i : s.data.train_idx) {
    LatentSeq n = normalize_latent(s.data.raw_latents[i], s.data);
    for (double v : n.data) mean_acc += v;
    count += n.data.size();
    LatentSeq back = denormalize_latent(n, s.data);
    for (std::size_t j = 0; j < back.data.size(); ++j)
      CHECK(back.data[j] == doctest::Approx(s.data.raw_latents[i].data[j]).epsilon(1e-9));
  }
  CHECK(std::abs(mean_acc / static_cast<double>(count)) < 1e-6);
}

TEST_CASE("train_step: finite loss, moves parameters, rejects bad batches") {
  ToySetup s = toy_setup();
  DrumDit model(micro_model(), 3);
  TrainConfig cfg = quick_train(4);
  Trainer trainer(model, s.data, cfg);

  std::vector<TrackRecord> train_records;
  for (std::size_t i : s.data.train_idx) train_records.push_back(s.data.records[i]);
  PairRecord pair;
  pair.target_id = train_records[0].id();
  pair.reference_id = train_records[1].id();
  pair.target_midi = train_records[0].midi_id;
  pair.reference_midi = train_records[1].midi_id;
  pair.kit_id = train_records[0].kit_id;
  pair.split = "train";

  const double before = model.params().get("dit.out.w").data()[0];
  const double loss = trainer.train_step({pair, pair, pair, pair}, 0, 0);
  CHECK(std::isfinite(loss));
  CHECK(loss >= 0.0);
  CHECK(model.params().get("dit.out.w").data()[0] != before);
  CHECK(model.params().step() == 1);

  CHECK_THROWS_AS(trainer.train_step({}, 0, 0), DrumdiffError);
  PairRecord cross = pair;
  cross.reference_id = s.data.records[s.data.val_idx[0]].id();
  CHECK_THROWS_AS(trainer.train_step({cross}, 0, 0), DrumdiffError);
}

TEST_CASE("two runs with identical seeds produce identical loss curves") {
  ToySetup s = toy_setup();
  std::vector<double> curves[2];
  for (int run = 0; run < 2; ++run) {
    DrumDit model(micro_model(), 3);
    TrainConfig cfg = quick_train(2);
    Trainer trainer(model, s.data, cfg);
    for (int e = 0; e < cfg.epochs; ++e) {
      curves[run].push_back(trainer.train_epoch(e));
      curves[run].push_back(trainer.validation_loss());
    }
  }
  REQUIRE(curves[0].size() == curves[1].size());
  for (std::size_t i = 0; i < curves[0].size(); ++i) CHECK(curves[0][i] == curves[1][i]);
}

TEST_CASE("train_loop writes one metrics record per epoch and checkpoints") {
  ToySetup s = toy_setup();
  DrumDit model(micro_model(), 3);
  TrainConfig cfg = quick_train(3);
  Trainer trainer(model, s.data, cfg);
  const std::string dir = "trainer_run_test";
  trainer.run(dir);
  std::ifstream log(dir + "/metrics.jsonl");
  REQUIRE(log.good());
  int lines = 0;
  std::string line;
  std::vector<nlohmann::json> entries;
  while (std::getline(log, line))
    if (!line.empty()) {
      entries.push_back(nlohmann::json::parse(line));
      ++lines;
    }
  CHECK(lines == 3);
  for (int e = 0; e < 3; ++e) {
    CHECK(entries[e].at("epoch") == e);
    CHECK(entries[e].contains("train_loss"));
    CHECK(entries[e].contains("val_loss"));
    CHECK(entries[e].contains("lr"));
    CHECK(entries[e].contains("p_arr_target"));
    CHECK(entries[e].contains("p_tap_reference"));
  }
  CHECK(std::filesystem::exists(dir + "/ckpt_final.ddt"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("resuming from a checkpoint reproduces the uninterrupted run") {
  ToySetup s = toy_setup();
  const std::string dir_a = "trainer_resume_a", dir_b = "trainer_resume_b";

  // uninterrupted: 4 epochs
  DrumDit model_a(micro_model(), 3);
  TrainConfig cfg = quick_train(4);
  Trainer trainer_a(model_a, s.data, cfg);
  trainer_a.run(dir_a);

  // interrupted: 2 epochs, then resume to 4
  DrumDit model_b(micro_model(), 3);
  TrainConfig cfg_short = cfg;
  cfg_short.epochs = 2;
  Trainer trainer_b(model_b, s.data, cfg_short);
  trainer_b.run(dir_b);
  DrumDit model_c(micro_model(), 777);  // different init; checkpoint overwrites it
  Trainer trainer_c(model_c, s.data, cfg);
  trainer_c.run(dir_b, dir_b + "/ckpt_latest.ddt");

  for (const std::string& name : model_a.params().names()) {
    const Tensor& pa = model_a.params().get(name);
    const Tensor& pc = model_c.params().get(name);
    for (std::size_t i = 0; i < pa.size(); ++i) {
      REQUIRE(pa.data()[i] == pc.data()[i]);
    }
  }
  // the stitched metrics log equals the uninterrupted one
  std::ifstream la(dir_a + "/metrics.jsonl"), lb(dir_b + "/metrics.jsonl");
  std::string a((std::istreambuf_iterator<char>(la)), std::istreambuf_iterator<char>());
  std::string b((std::istreambuf_iterator<char>(lb)), std::istreambuf_iterator<char>());
  // the short run wrote epochs 0-1 with its own config; compare suffixes
  CHECK(a.substr(a.size() / 2) == b.substr(b.size() / 2));
  std::filesystem::remove_all(dir_a);
  std::filesystem::remove_all(dir_b);
}

TEST_CASE("zero-epoch run leaves the initialization untouched") {
  ToySetup s = toy_setup();
  DrumDit model(micro_model(), 3);
  DrumDit twin(micro_model(), 3);
  TrainConfig cfg = quick_train(0);
  Trainer trainer(model, s.data, cfg);
  const std::string dir = "trainer_zero_test";
  trainer.run(dir);
  for (const std::string& name : model.params().names()) {
    const Tensor& p = model.params().get(name);
    const Tensor& q = twin.params().get(name);
    for (std::size_t i = 0; i < p.size(); ++i) REQUIRE(p.data()[i] == q.data()[i]);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("sample_pair returns a denormalized latent of the target length") {
  ToySetup s = toy_setup();
  DrumDit model(micro_model(), 3);
  std::vector<TrackRecord> tests;
  for (std::size_t i : s.data.test_idx) tests.push_back(s.data.records[i]);
  PairRecord pair;
  pair.target_id = tests[0].id();
  pair.reference_id = tests[1].id();
  pair.target_midi = tests[0].midi_id;
  pair.reference_midi = tests[1].midi_id;
  pair.kit_id = tests[0].kit_id;
  pair.split = "test";
  LatentSeq out = sample_pair(model, s.data, pair, 16, 2, 1.0, SamplerKind::Ddim, 5);
  CHECK(out.frames == 86);
  for (double v : out.data) CHECK(std::isfinite(v));
}

TEST_CASE("grid_truth_onsets reads the global onset column") {
  TempoMap tempo;
  BinarizedGrid g = binarize({{0.0, DrumGroup::Kick, 100}, {1.0, DrumGroup::Ride, 100}},
                             tempo, 64, 2);
  OnsetList t = grid_truth_onsets(g);
  REQUIRE(t.size() == 2);
  CHECK(t[0] == doctest::Approx(0.0));
  CHECK(t[1] == doctest::Approx(1.0));
}
