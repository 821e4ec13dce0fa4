#include <gtest/gtest.h>

#include <set>

#include "gradcheck.hpp"
#include "spi/models/checkpoint.hpp"
#include "spi/models/ensemble.hpp"
#include "spi/models/split.hpp"
#include "spi/models/train.hpp"
#include "spi/pipeline.hpp"
#include "synthetic.hpp"
#include "test_util.hpp"

using namespace spi;
using namespace spi::models;
using testutil::code_of;

namespace {

EmbeddingMatrix random_table(const std::vector<TokenSequence>& corpus, std::size_t dim, std::uint64_t seed) {
  EmbeddingMatrix emb;
  emb.vocabulary = build_vocabulary(corpus);
  emb.vocabulary.add(std::string(tokens::kEos));
  emb.table = nn::Tensor::matrix(emb.vocabulary.size(), dim);
  Rng rng(seed);
  for (std::size_t r = 1; r < emb.size(); ++r) {
    for (std::size_t c = 0; c < dim; ++c) emb.table(r, c) = rng.uniform(-0.5, 0.5);
  }
  return emb;
}

CmShape tiny_cm() {
  CmShape s;
  s.max_length = 16;
  s.embed_dim = 6;
  s.lstm_units = 6;
  s.conv1_filters = 6;
  s.conv2_filters = 4;
  return s;
}

CrShape tiny_cr() {
  CrShape s;
  s.embed_dim = 6;
  s.lstm_units = 6;
  s.conv1_filters = 4;
  s.conv2_filters = 4;
  return s;
}

TrainingConfig quick_training(std::size_t epochs = 5) {
  TrainingConfig c;
  c.batch_size = 8;
  c.learning_rate = 5e-3;
  c.max_epochs = epochs;
  c.patience = epochs;
  c.seed = 11;
  return c;
}

StatementSequence statements(std::size_t n, const std::string& token = "a") {
  StatementSequence s;
  for (std::size_t i = 0; i < n; ++i) s.statements.push_back({token, ";"});
  return s;
}

}  // namespace

TEST(Shapes, DefaultFeatureCounts) {
  // 100 -> conv 98 -> pool 49 -> conv 47 -> pool 23, times 32 filters.
  EXPECT_EQ(CmShape{}.flat_features(), 23u * 32u);
  // 20 fused rows -> stride-2 conv 9 -> stride-2 conv 4, times 32 filters.
  EXPECT_EQ(CrShape{}.flat_features(), 4u * 32u);
  CmShape too_short;
  too_short.max_length = 4;
  EXPECT_EQ(code_of([&] { too_short.flat_features(); }), "invalid_config");
}

TEST(Shapes, JsonRoundTrip) {
  EXPECT_EQ(CmShape::from_json(tiny_cm().to_json()), tiny_cm());
  EXPECT_EQ(CrShape::from_json(tiny_cr().to_json()), tiny_cr());
}

TEST(CmModelTest, ProbabilityIsDeterministicInEvalMode) {
  const auto emb = random_table({{"a", "b", "c"}}, 6, 1);
  const auto m = CmModel::init(tiny_cm(), emb, 3);
  const auto in = encode_sequence({"a", "b", "c", "a"}, m.embedding, 16);
  const double p = cm_forward(in, m);
  EXPECT_GT(p, 0.0);
  EXPECT_LT(p, 1.0);
  EXPECT_EQ(p, cm_forward(in, m));
  EXPECT_NE(cm_forward(in, m, true, 5, 0.5), p);
  EXPECT_EQ(cm_forward(in, m, true, 5, 0.5), cm_forward(in, m, true, 5, 0.5));
}

TEST(CmModelTest, InitChecksEmbeddingWidth) {
  EXPECT_EQ(code_of([] { CmModel::init(tiny_cm(), random_table({{"a", "b"}}, 5, 1), 1); }), "shape_mismatch");
}

TEST(CmModelTest, BackwardBeforeForwardIsAnError) {
  const auto m = CmModel::init(tiny_cm(), random_table({{"a", "b"}}, 6, 1), 1);
  CmGraph graph(m);
  EXPECT_EQ(code_of([&] { graph.backward(1); }), "no_forward");
  graph.forward(encode_sequence({"a"}, m.embedding, 16), {});
  EXPECT_NO_THROW(graph.backward(1));
}

TEST(CrModelTest, StatementCapMakesLaterStatementsInvisible) {
  const auto m = CrModel::init(tiny_cr(), random_table({{"a", "b", ";"}}, 6, 2), 4);
  const auto base_add = statements(10, "a");
  const auto base_sub = statements(12, "b");
  const double p = cr_forward(base_add, base_sub, m);
  auto more_add = base_add;
  auto more_sub = base_sub;
  for (int i = 0; i < 5; ++i) {
    more_add.statements.push_back({"b", "b", "b"});
    more_sub.statements.push_back({"a"});
  }
  EXPECT_EQ(cr_forward(more_add, more_sub, m), p);
  const auto enc = encode_revision(m, more_add, more_sub);
  EXPECT_EQ(enc.additive.eos_positions.size(), 10u);
  EXPECT_EQ(enc.subtractive.eos_positions.size(), 10u);
}

TEST(CrModelTest, TokenBudgetCutsLongSides) {
  auto shape = tiny_cr();
  shape.max_tokens = 7;
  const auto m = CrModel::init(shape, random_table({{"a", "b", ";"}}, 6, 2), 4);
  StatementSequence side{{{"a", "a", "a"}, {"b", "b", "b"}, {"a"}}};
  const auto enc = encode_side(side, m.embedding, shape);
  EXPECT_EQ(enc.indices.size(), 7u);
  EXPECT_EQ(enc.eos_positions, (std::vector<std::size_t>{3}));
  StatementSequence tail = side;
  tail.statements.back() = {"b", "a", "b"};
  EXPECT_EQ(cr_forward(side, {}, m), cr_forward(tail, {}, m));
}

TEST(CrModelTest, OneSidedAndEmptyRevisions) {
  const auto m = CrModel::init(tiny_cr(), random_table({{"a", "b", ";"}}, 6, 2), 4);
  EXPECT_NO_THROW(cr_forward(statements(2), {}, m));
  EXPECT_NO_THROW(cr_forward({}, statements(2), m));
  EXPECT_EQ(code_of([&] { cr_forward({}, {}, m); }), "empty_revision");
}

TEST(CrModelTest, RequiresEosInVocabulary) {
  EmbeddingMatrix emb;
  emb.vocabulary = build_vocabulary({{"a", "b"}});
  emb.table = nn::Tensor::matrix(emb.vocabulary.size(), 6);
  EXPECT_EQ(code_of([&] { CrModel::init(tiny_cr(), emb, 1); }), "invalid_config");
}

TEST(Metrics, HandComputedValues) {
  const auto m = compute_metrics(3, 1, 1, 5);
  EXPECT_DOUBLE_EQ(*m.precision, 0.75);
  EXPECT_DOUBLE_EQ(*m.recall, 0.75);
  EXPECT_DOUBLE_EQ(*m.f1, 0.75);
  EXPECT_EQ(m.total(), 10u);
  EXPECT_TRUE(m.flags().empty());
  const auto none = compute_metrics(0, 0, 0, 4);
  EXPECT_FALSE(none.precision);
  EXPECT_FALSE(none.recall);
  EXPECT_FALSE(none.f1);
  EXPECT_EQ(none.flags(), (std::vector<std::string>{"precision_undefined", "recall_undefined", "f1_undefined"}));
  const auto zero = compute_metrics(0, 2, 3, 0);
  EXPECT_DOUBLE_EQ(*zero.precision, 0.0);
  EXPECT_FALSE(zero.f1) << "0/0 harmonic mean";
  const auto j = none.to_json();
  EXPECT_TRUE(j["precision"].is_null());
}

TEST(Metrics, FromLabels) {
  const auto m = metrics_from_labels({1, 1, 0, 0, 1}, {1, 0, 1, 0, 1});
  EXPECT_EQ(m.tp, 2u);
  EXPECT_EQ(m.fp, 1u);
  EXPECT_EQ(m.fn, 1u);
  EXPECT_EQ(m.tn, 1u);
  EXPECT_EQ(code_of([] { metrics_from_labels({1}, {1, 0}); }), "misaligned");
}

TEST(Metrics, BucketsPartitionOverall) {
  std::vector<Prediction> preds;
  std::map<std::string, Label> truth;
  std::map<std::string, std::size_t> lengths;
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    const auto h = synth::synthetic_hash(9, static_cast<std::size_t>(i));
    Prediction p;
    p.hash = h;
    p.p_cm = p.p = rng.uniform();
    p.label = p.p >= 0.5 ? Label::SP : Label::NSP;
    preds.push_back(p);
    truth[h] = rng.below(2) ? Label::SP : Label::NSP;
    lengths[h] = rng.below(220);
  }
  const auto e = evaluate(preds, truth, &lengths);
  ASSERT_EQ(e.buckets.size(), 4u);
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (const auto& b : e.buckets) {
    tp += b.metrics.tp;
    fp += b.metrics.fp;
    fn += b.metrics.fn;
    tn += b.metrics.tn;
  }
  EXPECT_EQ(tp, e.overall.tp);
  EXPECT_EQ(fp, e.overall.fp);
  EXPECT_EQ(fn, e.overall.fn);
  EXPECT_EQ(tn, e.overall.tn);
  EXPECT_EQ(e.buckets[0].lo, 0u);
  EXPECT_EQ(e.buckets[3].lo, 150u);
  EXPECT_FALSE(e.buckets[3].hi);
  const auto j = e.to_json();
  EXPECT_EQ(j["format_version"], 1);
  EXPECT_EQ(j["buckets"].size(), 4u);
}

TEST(Metrics, EvaluateRejectsUnknownHashes) {
  Prediction p;
  p.hash = std::string(40, 'b');
  EXPECT_FALSE(code_of([&] { evaluate({p}, {}, nullptr); }).empty());
}

TEST(PredictionJson, RoundTrip) {
  const auto a = make_prediction(std::string(40, 'c'), 0.2, 0.9, 0.5, 0.5);
  EXPECT_EQ(Prediction::from_json(a.to_json()).to_json(), a.to_json());
  const auto b = make_prediction(std::string(40, 'd'), 0.7, std::nullopt, 0.5, 0.5);
  EXPECT_TRUE(b.to_json()["p_cr"].is_null());
  EXPECT_EQ(b.flags, std::vector<std::string>{"empty_revision"});
  EXPECT_EQ(b.p, 0.7);
}

TEST(Ensemble, EndpointsAreExactAndResultStaysBetweenInputs) {
  Rng rng(8);
  for (int i = 0; i < 2000; ++i) {
    const double a = rng.uniform(), b = rng.uniform(), w = rng.uniform();
    EXPECT_EQ(combine(a, b, 1.0), a);
    EXPECT_EQ(combine(a, b, 0.0), b);
    EXPECT_EQ(combine(a, a, w), a);
    const double p = combine(a, b, w);
    EXPECT_GE(p, std::min(a, b));
    EXPECT_LE(p, std::max(a, b));
    EXPECT_LE(combine(std::min(a, b), b, w), combine(std::max(a, b), b, w));
  }
}

TEST(Ensemble, ThresholdIsInclusive) {
  EXPECT_EQ(make_prediction("h", 0.5, 0.5, 0.5, 0.5).label, Label::SP);
  EXPECT_EQ(make_prediction("h", 0.49, 0.5, 1.0, 0.5).label, Label::NSP);
}

TEST(Ensemble, CodeOnlyEvidenceStillFlagsPositive) {
  // CM below threshold, CR above it, equal weights.
  const auto p = make_prediction("h", 0.3466, 0.8649, 0.5, 0.5);
  EXPECT_EQ(p.label, Label::SP);
}

TEST(Ensemble, WeightFitPrefersBestF1ThenHalf) {
  // Only the code model is informative: every w below 0.5 scores F1 = 1,
  // so the tie-break lands on the grid point nearest 0.5 from below.
  const std::vector<double> cm{0.9, 0.9, 0.1, 0.1}, cr{0.9, 0.1, 0.9, 0.1};
  const std::vector<int> y{1, 0, 1, 0};
  EXPECT_NEAR(fit_ensemble_weight(cm, cr, y), 0.45, 1e-12);
  EXPECT_NEAR(fit_ensemble_weight(cr, cm, y), 0.55, 1e-12);
  EXPECT_EQ(fit_ensemble_weight(cm, cm, y), 0.5);
  EXPECT_EQ(code_of([&] { fit_ensemble_weight(cm, cr, {1}); }), "misaligned");
}

TEST(Ensemble, ValidateRejectsOutOfRange) {
  EnsembleModel m;
  m.weight = 1.5;
  EXPECT_EQ(code_of([&] { m.validate(); }), "invalid_config");
  m.weight = 0.5;
  m.threshold = 1.0;
  EXPECT_EQ(code_of([&] { m.validate(); }), "invalid_config");
}

TEST(Split, IntraIsADeterministicPartition) {
  const auto corpus = synth::corpus(synth::Signal::Message, 101, 3);
  const auto a = split_dataset(corpus, SplitMode::intra(0.75), 9);
  const auto b = split_dataset(corpus, SplitMode::intra(0.75), 9);
  const auto c = split_dataset(corpus, SplitMode::intra(0.75), 10);
  EXPECT_EQ(a.train.size(), 76u);
  EXPECT_EQ(a.test.size(), 25u);
  std::set<std::string> train, test;
  for (const auto& r : a.train) train.insert(r.hash);
  for (const auto& r : a.test) test.insert(r.hash);
  for (const auto& h : test) EXPECT_FALSE(train.count(h));
  EXPECT_EQ(train.size() + test.size(), corpus.size());
  EXPECT_EQ(a.train, b.train);
  EXPECT_NE(a.train, c.train);
}

TEST(Split, CrossHoldsOutOneProject) {
  auto corpus = synth::corpus(synth::Signal::Message, 20, 3, "linux");
  auto more = synth::corpus(synth::Signal::Message, 10, 4, "qemu");
  corpus.insert(corpus.end(), more.begin(), more.end());
  const auto s = split_dataset(corpus, SplitMode::cross("qemu"), 1);
  EXPECT_EQ(s.test.size(), 10u);
  for (const auto& r : s.test) EXPECT_EQ(r.project, "qemu");
  for (const auto& r : s.train) EXPECT_EQ(r.project, "linux");
  EXPECT_EQ(code_of([&] { split_dataset(corpus, SplitMode::cross("ffmpeg"), 1); }), "unknown_project");
}

TEST(Checkpoint, RoundTripPreservesPredictionsAndBytes) {
  testutil::TempDir dir;
  const auto corpus = synth::corpus(synth::Signal::Code, 8, 2);
  auto cm = CmModel::init(tiny_cm(), random_table(message_corpus(corpus), 6, 1), 5);
  auto cr = CrModel::init(tiny_cr(), random_table(code_corpus(corpus), 6, 2), 6);
  save_cm(dir / "cm.ckpt", cm, 5);
  save_cr(dir / "cr.ckpt", cr, 6);
  auto cm2 = load_cm(dir / "cm.ckpt", cm.embedding);
  auto cr2 = load_cr(dir / "cr.ckpt", cr.embedding);
  EnsembleModel a{cm, cr}, b{cm2, cr2};
  for (const auto& c : corpus) {
    EXPECT_EQ(ensemble_predict(c, a).to_json(), ensemble_predict(c, b).to_json());
  }
  save_cm(dir / "cm2.ckpt", cm2, 5);
  EXPECT_EQ(testutil::read_file(dir / "cm.ckpt"), testutil::read_file(dir / "cm2.ckpt"));
  EXPECT_EQ(spi::models::detail::peek_header(dir / "cr.ckpt").model, "cr");
}

TEST(Checkpoint, MismatchesAreRejected) {
  testutil::TempDir dir;
  auto cm = CmModel::init(tiny_cm(), random_table({{"a", "b"}}, 6, 1), 5);
  save_cm(dir / "cm.ckpt", cm, 5);
  EXPECT_FALSE(code_of([&] { load_cr(dir / "cm.ckpt", random_table({{"a", "b"}}, 6, 1)); }).empty());
  EXPECT_FALSE(code_of([&] { load_cm(dir / "cm.ckpt", random_table({{"a", "c"}}, 6, 1)); }).empty());
  auto bytes = testutil::read_file(dir / "cm.ckpt");
  testutil::write_file(dir / "short.ckpt", bytes.substr(0, bytes.size() - 8));
  EXPECT_EQ(code_of([&] { load_cm(dir / "short.ckpt", cm.embedding); }), "schema_violation");
  testutil::write_file(dir / "long.ckpt", bytes + "x");
  EXPECT_EQ(code_of([&] { load_cm(dir / "long.ckpt", cm.embedding); }), "schema_violation");
  EXPECT_FALSE(code_of([&] { load_cm(dir / "missing.ckpt", cm.embedding); }).empty());
}

TEST(Training, SameSeedGivesIdenticalParameters) {
  const auto corpus = synth::corpus(synth::Signal::Message, 40, 6);
  const auto emb = random_table(message_corpus(corpus), 6, 3);
  auto a = CmModel::init(tiny_cm(), emb, 2);
  auto b = CmModel::init(tiny_cm(), emb, 2);
  const auto la = train_cm(a, corpus, quick_training(3));
  const auto lb = train_cm(b, corpus, quick_training(3));
  const auto pa = a.parameters(), pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(*pa[i].tensor, *pb[i].tensor) << pa[i].name;
  ASSERT_EQ(la.epochs.size(), lb.epochs.size());
  for (std::size_t i = 0; i < la.epochs.size(); ++i) EXPECT_EQ(la.epochs[i].train_loss, lb.epochs[i].train_loss);
}

TEST(Training, LogShapeAndBestEpochRestore) {
  const auto corpus = synth::corpus(synth::Signal::Message, 40, 6);
  auto m = CmModel::init(tiny_cm(), random_table(message_corpus(corpus), 6, 3), 2);
  const auto log = train_cm(m, corpus, quick_training(6));
  EXPECT_EQ(log.validation_examples, 4u);
  EXPECT_EQ(log.train_examples, 36u);
  ASSERT_EQ(log.epochs.size(), 6u);
  double best = 1e300;
  std::size_t best_epoch = 0;
  for (const auto& e : log.epochs) {
    ASSERT_TRUE(e.validation_loss);
        if (*e.validation_loss < best) {
      best = *e.validation_loss;
      best_epoch = e.epoch;
    }
  }
  EXPECT_EQ(log.best_epoch, best_epoch);
  const auto j = log.to_json();
  EXPECT_EQ(j["epochs"].size(), 6u);
}

TEST(Training, PatienceStopsEarly) {
  const auto corpus = synth::corpus(synth::Signal::Message, 40, 6);
  auto m = CmModel::init(tiny_cm(), random_table(message_corpus(corpus), 6, 3), 2);
  auto cfg = quick_training(200);
  cfg.patience = 2;
  cfg.learning_rate = 0.5;  // large steps overshoot quickly
  const auto log = train_cm(m, corpus, cfg);
  EXPECT_TRUE(log.stopped_early);
  EXPECT_EQ(log.epochs.size(), log.best_epoch + 2);
}

TEST(Training, DegenerateAndUnlabeledCorporaAreRejected) {
  auto corpus = synth::corpus(synth::Signal::Message, 10, 6);
  auto m = CmModel::init(tiny_cm(), random_table(message_corpus(corpus), 6, 3), 2);
  auto all_sp = corpus;
  for (auto& c : all_sp) c.label = Label::SP;
  EXPECT_EQ(code_of([&] { train_cm(m, all_sp, quick_training(1)); }), "degenerate_labels");
  auto unlabeled = corpus;
  unlabeled[3].label.reset();
  EXPECT_EQ(code_of([&] { train_cm(m, unlabeled, quick_training(1)); }), "invalid_label");
  auto cfg = quick_training(1);
  cfg.batch_size = 0;
  EXPECT_EQ(code_of([&] { train_cm(m, corpus, cfg); }), "invalid_config");
}

TEST(Training, CodeTrainerSkipsEmptyRevisions) {
  auto corpus = synth::corpus(synth::Signal::Code, 20, 7);
  corpus[0].file_diffs.clear();
  corpus[1].file_diffs = {{"x.c", {"   "}, {"// only a comment"}}};
  auto m = CrModel::init(tiny_cr(), random_table(code_corpus(corpus), 6, 3), 2);
  const auto log = train_cr(m, corpus, quick_training(1));
  EXPECT_EQ(log.skipped_examples, 2u);
  EXPECT_EQ(log.train_examples + log.validation_examples, 18u);
}

TEST(Training, FineTuningMovesEmbeddingsButNotPadding) {
  const auto corpus = synth::corpus(synth::Signal::Message, 30, 6);
  auto m = CmModel::init(tiny_cm(), random_table(message_corpus(corpus), 6, 3), 2);
  const auto before = m.embedding.table;
  auto cfg = quick_training(2);
  cfg.fine_tune_embeddings = true;
  train_cm(m, corpus, cfg);
  EXPECT_NE(m.embedding.table, before);
  for (double x : m.embedding.row(Vocabulary::kPad)) EXPECT_EQ(x, 0.0);
}

TEST(TrainingConfigJson, RoundTripAndValidation) {
  auto c = quick_training(9);
  c.fine_tune_embeddings = true;
  const auto back = TrainingConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_EQ(code_of([] { TrainingConfig::from_json({{"dropout", 1.0}}); }), "invalid_config");
  EXPECT_EQ(code_of([] { TrainingConfig::from_json({{"validation_fraction", -0.1}}); }), "invalid_config");
}
