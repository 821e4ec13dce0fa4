#include <gtest/gtest.h>

#include <set>
#include <thread>

#include "spi/review.hpp"
#include "synthetic.hpp"
#include "test_util.hpp"

using namespace spi;
using namespace spi::review;
using testutil::code_of;

namespace {

constexpr ReviewLabel kLabels[] = {ReviewLabel::SP, ReviewLabel::NSP, ReviewLabel::UNSURE};

// Expected outcome written out per case rather than derived from the store.
struct Expected {
  Status after_two;
  bool adjudication_allowed;
  Status after_adjudication;
  std::optional<ReviewLabel> final_label;
  bool exported;
};

Expected oracle(ReviewLabel a, ReviewLabel b, ReviewLabel senior) {
  const bool agree = a == b && a != ReviewLabel::UNSURE;
  if (agree) return {Status::Agreed, false, Status::Agreed, a, true};
  if (senior == ReviewLabel::UNSURE) return {Status::Conflicted, true, Status::Excluded, senior, false};
  return {Status::Conflicted, true, Status::Adjudicated, senior, true};
}

std::string label_name(ReviewLabel l) { return std::string(to_string(l)); }

QueueItem item(std::size_t i, std::optional<double> p = std::nullopt) {
  CommitRecord c;
  c.hash = synth::synthetic_hash(77, i);
  c.author = "A <a@example.invalid>";
  c.date = "Mon, 1 Jan 2018 00:00:00 +0000";
  c.message = "commit " + std::to_string(i);
  c.project = "p";
  c.file_diffs = {{"a.c", {"x++;"}, {}}};
  QueueItem q{c, std::nullopt};
  if (p) q.prediction = models::make_prediction(c.hash, *p, *p, 0.5, 0.5);
  return q;
}

LabelStore::Clock fixed_clock() {
  return [] { return std::string("2018-01-01T00:00:00Z"); };
}

}  // namespace

TEST(ReviewStateMachine, AllTwentySevenScenarios) {
  std::size_t scenarios = 0;
  for (auto a : kLabels) {
    for (auto b : kLabels) {
      for (auto s : kLabels) {
        const auto tag = label_name(a) + "/" + label_name(b) + "/" + label_name(s);
        const auto want = oracle(a, b, s);
        LabelStore store({}, 0, fixed_clock());
        const auto it = item(0);
        const auto& h = it.commit.hash;
        store.add_items({it});
        EXPECT_EQ(store.state(h).status, Status::Unreviewed) << tag;
        EXPECT_EQ(code_of([&] { store.adjudicate(h, "senior", s); }), "not_conflicted") << tag;

        const auto one = store.submit_initial(h, "r1", a);
        EXPECT_EQ(one.status, Status::OneLabel) << tag;
        EXPECT_FALSE(one.final_label) << tag;
        EXPECT_EQ(code_of([&] { store.submit_initial(h, "r1", b); }), "duplicate_label") << tag;
        EXPECT_EQ(code_of([&] { store.adjudicate(h, "senior", s); }), "not_conflicted") << tag;

        const auto two = store.submit_initial(h, "r2", b);
        EXPECT_EQ(two.status, want.after_two) << tag;
        EXPECT_EQ(code_of([&] { store.submit_initial(h, "r3", a); }), "review_closed") << tag;
        if (want.after_two == Status::Conflicted) {
          EXPECT_FALSE(two.final_label) << tag;
          EXPECT_EQ(code_of([&] { store.adjudicate(h, "r1", s); }), "self_adjudication") << tag;
          EXPECT_EQ(code_of([&] { store.adjudicate(h, "r2", s); }), "self_adjudication") << tag;
        }

        const auto err = code_of([&] { store.adjudicate(h, "senior", s); });
        EXPECT_EQ(err.empty(), want.adjudication_allowed) << tag << " " << err;
        const auto final_state = store.state(h);
        EXPECT_EQ(final_state.status, want.after_adjudication) << tag;
        EXPECT_EQ(final_state.final_label, want.final_label) << tag;
        if (want.adjudication_allowed) {
          EXPECT_EQ(code_of([&] { store.adjudicate(h, "senior2", s); }), "not_conflicted") << tag;
        }

        const auto exported = store.export_labeled();
        ASSERT_EQ(exported.size(), want.exported ? 1u : 0u) << tag;
        if (want.exported) {
          EXPECT_EQ(exported[0].label, *want.final_label == ReviewLabel::SP ? Label::SP : Label::NSP) << tag;
        }
        ++scenarios;
      }
    }
  }
  EXPECT_EQ(scenarios, 27u);
}

TEST(ReviewStateMachine, RejectedTransitionsLeaveStateUntouched) {
  LabelStore store({}, 0, fixed_clock());
  const auto it = item(1);
  store.add_items({it});
  store.submit_initial(it.commit.hash, "r1", ReviewLabel::SP);
  EXPECT_EQ(code_of([&] { store.submit_initial(it.commit.hash, "r1", ReviewLabel::NSP); }), "duplicate_label");
  EXPECT_EQ(code_of([&] { store.submit_initial(it.commit.hash, "", ReviewLabel::NSP); }), "invalid_reviewer");
  EXPECT_EQ(code_of([&] { store.submit_initial(std::string(40, 'f'), "r1", ReviewLabel::NSP); }), "unknown_commit");
  EXPECT_EQ(store.records().size(), 1u);
  const auto s = store.state(it.commit.hash);
  EXPECT_EQ(s.status, Status::OneLabel);
  EXPECT_EQ(s.initial.size(), 1u);
  EXPECT_EQ(code_of([] { parse_review_label("maybe"); }), "invalid_label");
}

TEST(ReviewView, FirstLabelIsHiddenUntilBothExist) {
  LabelStore store({}, 0, fixed_clock());
  const auto it = item(2);
  const auto& h = it.commit.hash;
  store.add_items({it});
  store.submit_initial(h, "r1", ReviewLabel::SP);
  const auto other = review_view(store.state(h), "r2");
  EXPECT_TRUE(other["own_label"].is_null());
  EXPECT_FALSE(other.contains("initial_labels"));
  EXPECT_EQ(other.dump().find("\"SP\""), std::string::npos);
  EXPECT_EQ(review_view(store.state(h), "r1")["own_label"], "SP");
  store.submit_initial(h, "r2", ReviewLabel::UNSURE);
  const auto after = review_view(store.state(h), "senior");
  EXPECT_EQ(after["status"], "conflicted");
  ASSERT_EQ(after["initial_labels"].size(), 2u);
  EXPECT_EQ(after["initial_labels"][0]["label"], "SP");
  EXPECT_EQ(after["initial_labels"][1]["label"], "UNSURE");
}

TEST(ReviewQueue, OrdersAndFilters) {
  LabelStore store({}, 0, fixed_clock());
  store.add_items({item(0, 0.2), item(1, 0.9), item(2, 0.5), item(3)});
  const auto desc = store.queue(std::nullopt, QueueOrder::ProbabilityDesc);
  ASSERT_EQ(desc.size(), 4u);
  EXPECT_EQ(desc[0].first.commit.hash, item(1).commit.hash);
  EXPECT_EQ(desc[1].first.commit.hash, item(2).commit.hash);
  EXPECT_EQ(desc[3].first.commit.hash, item(3).commit.hash) << "unscored items last";
  const auto asc = store.queue(std::nullopt, QueueOrder::ProbabilityAsc);
  EXPECT_EQ(asc[0].first.commit.hash, item(3).commit.hash);
  EXPECT_EQ(asc[1].first.commit.hash, item(0).commit.hash);
  const auto by_hash = store.queue(std::nullopt, QueueOrder::Hash);
  EXPECT_TRUE(std::is_sorted(by_hash.begin(), by_hash.end(),
                             [](const auto& a, const auto& b) { return a.first.commit.hash < b.first.commit.hash; }));
  store.submit_initial(item(2).commit.hash, "r1", ReviewLabel::NSP);
  const auto one = store.queue(Status::OneLabel, QueueOrder::Hash);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].first.commit.hash, item(2).commit.hash);
  EXPECT_EQ(store.status_counts()["unreviewed"], 3u);
  EXPECT_EQ(code_of([] { parse_queue_order("random"); }), "invalid_config");
}

TEST(ReviewExport, MixedStoreExportsAgreedAndAdjudicatedOnly) {
  LabelStore store({}, 0, fixed_clock());
  std::vector<QueueItem> items;
  for (std::size_t i = 0; i < 5; ++i) items.push_back(item(i));
  store.add_items(items);
  const auto h = [&](std::size_t i) { return items[i].commit.hash; };
  store.submit_initial(h(0), "a", ReviewLabel::SP);
  store.submit_initial(h(0), "b", ReviewLabel::SP);
  store.submit_initial(h(1), "a", ReviewLabel::NSP);
  store.submit_initial(h(1), "b", ReviewLabel::NSP);
  store.submit_initial(h(2), "a", ReviewLabel::SP);
  store.submit_initial(h(2), "b", ReviewLabel::NSP);
  store.submit_initial(h(3), "a", ReviewLabel::UNSURE);
  store.submit_initial(h(3), "b", ReviewLabel::UNSURE);
  store.adjudicate(h(3), "s", ReviewLabel::UNSURE);
  const auto out = store.export_labeled();
  std::set<std::string> hashes;
  for (const auto& c : out) hashes.insert(c.hash);
  EXPECT_EQ(hashes, (std::set<std::string>{h(0), h(1)}));
  std::stringstream ss;
  write_corpus(out, ss);
  const auto back = read_corpus(ss);
  EXPECT_EQ(back.size(), 2u);
  for (const auto& c : back) EXPECT_TRUE(c.label);
}

TEST(Journal, ReplayRestoresStateAndCompactionKeepsIt) {
  testutil::TempDir dir;
  const auto path = dir / "labels.journal";
  std::vector<QueueItem> items{item(0, 0.7), item(1), item(2, 0.1)};
  {
    LabelStore store(path, 0, fixed_clock());
    store.add_items(items);
    store.submit_initial(items[0].commit.hash, "a", ReviewLabel::SP);
    store.submit_initial(items[0].commit.hash, "b", ReviewLabel::NSP);
    store.adjudicate(items[0].commit.hash, "s", ReviewLabel::SP);
    store.submit_initial(items[1].commit.hash, "a", ReviewLabel::NSP);
    store.add_items({items[2]});  // re-adding replaces the item, not its labels
  }
  const auto check = [&](const LabelStore& s) {
    EXPECT_EQ(s.items().size(), 3u);
    EXPECT_EQ(s.records().size(), 4u);
    EXPECT_EQ(s.state(items[0].commit.hash).status, Status::Adjudicated);
    EXPECT_EQ(s.state(items[1].commit.hash).status, Status::OneLabel);
    EXPECT_DOUBLE_EQ(s.item(items[2].commit.hash)->prediction->p, 0.1);
    EXPECT_EQ(s.export_labeled().size(), 1u);
  };
  LabelStore replayed(path, 0, fixed_clock());
  check(replayed);
  const auto before_lines = testutil::read_file(path);
  replayed.compact();
  const auto after_lines = testutil::read_file(path);
  EXPECT_LT(after_lines.size(), before_lines.size());
  LabelStore compacted(path, 0, fixed_clock());
  check(compacted);
}

TEST(Journal, AutomaticCompactionAndCorruption) {
  testutil::TempDir dir;
  const auto path = dir / "j";
  {
    LabelStore store(path, 3, fixed_clock());
    store.add_items({item(0)});
    for (int i = 0; i < 5; ++i) store.add_items({item(0)});
    store.submit_initial(item(0).commit.hash, "a", ReviewLabel::SP);
  }
  const auto text = testutil::read_file(path);
  EXPECT_LE(std::count(text.begin(), text.end(), '\n'), 4);
  EXPECT_EQ(LabelStore(path).state(item(0).commit.hash).status, Status::OneLabel);

  testutil::write_file(dir / "bad", "{\"type\":\"item\"\n");
  EXPECT_EQ(code_of([&] { LabelStore s(dir / "bad"); }), "schema_violation");
  testutil::write_file(dir / "weird", "{\"type\":\"other\"}\n");
  EXPECT_EQ(code_of([&] { LabelStore s(dir / "weird"); }), "schema_violation");
  // A journal that records an impossible transition is refused on replay.
  auto record = LabelRecord{item(0).commit.hash, "a", ReviewLabel::NSP, "t", Round::Initial}.to_json();
  record["type"] = "label";
  testutil::write_file(dir / "dup", text + record.dump() + "\n");
  EXPECT_EQ(code_of([&] { LabelStore s(dir / "dup"); }), "duplicate_label");
}

TEST(ReviewSimulation, FiveHundredCommitsWithConcurrentReviewers) {
  testutil::TempDir dir;
  LabelStore store(dir / "j", 64, fixed_clock());
  std::vector<QueueItem> items;
  for (std::size_t i = 0; i < 500; ++i) items.push_back(item(i, static_cast<double>(i % 97) / 97.0));
  store.add_items(items);

  const auto pick = [](std::size_t i, std::uint64_t who) {
    Rng rng(Rng::derive(99, i, who));
    return kLabels[rng.below(3)];
  };
  std::vector<std::thread> reviewers;
  for (std::uint64_t who : {1u, 2u}) {
    reviewers.emplace_back([&, who] {
      for (std::size_t i = 0; i < items.size(); ++i) store.submit_initial(items[i].commit.hash, "r" + std::to_string(who), pick(i, who));
    });
  }
  for (auto& t : reviewers) t.join();

  std::set<std::string> expected_export;
  std::map<std::string, ReviewLabel> expected_label;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& h = items[i].commit.hash;
    const auto want = oracle(pick(i, 1), pick(i, 2), pick(i, 3));
    ASSERT_EQ(store.state(h).status, want.after_two);
    if (want.adjudication_allowed) store.adjudicate(h, "senior", pick(i, 3));
    ASSERT_EQ(store.state(h).status, want.after_adjudication);
    if (want.exported) {
      expected_export.insert(h);
      expected_label[h] = *want.final_label;
    }
  }
  const auto exported = store.export_labeled();
  std::set<std::string> got;
  for (const auto& c : exported) {
    got.insert(c.hash);
    EXPECT_EQ(*c.label == Label::SP, expected_label.at(c.hash) == ReviewLabel::SP);
  }
  EXPECT_EQ(got, expected_export);
  EXPECT_GT(got.size(), 200u);
  EXPECT_LT(got.size(), 500u);
  const LabelStore replayed(dir / "j");
  EXPECT_EQ(replayed.export_labeled().size(), exported.size());
}
