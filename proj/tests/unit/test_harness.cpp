#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "bbox/dataset.hpp"
#include "bbox/error.hpp"
#include "bbox/harness.hpp"
#include "bbox/zoo.hpp"
#include "support.hpp"

using namespace bbox;

namespace {

struct Fixture {
  std::shared_ptr<const Dataset> data;
  std::shared_ptr<const DifferentiableNet> target;
  std::shared_ptr<const std::vector<DifferentiableNet>> surrogates;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    auto ds = synth_dataset("blobs", {{"count", 200}, {"separation", 1.5}}, 5).data;
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.seed = 1;
    auto target = train(make_mlp(ds.images.shape(), ds.classes, 11, 32), ds, cfg);
    cfg.seed = 2;
    auto surrogate = train(make_linear(ds.images.shape(), ds.classes, 12), ds, cfg);
    return Fixture{std::make_shared<const Dataset>(std::move(ds)),
                   std::make_shared<const DifferentiableNet>(std::move(target)),
                   std::make_shared<const std::vector<DifferentiableNet>>(std::vector{std::move(surrogate)})};
  }();
  return f;
}

ThreatModel open_threat_model() {
  ThreatModel tm;
  tm.access = Access::WithInteractiveAccess;
  tm.feedback = FeedbackMode::full_scores();
  tm.quality = DataQuality::CompleteOverlap;
  tm.quantity = DataQuantity::Sufficient;
  return tm;
}

BenchmarkPlan small_plan(std::vector<std::string> ids) {
  const auto& f = fixture();
  BenchmarkPlan plan;
  plan.data = f.data;
  plan.target = f.target;
  plan.surrogates = f.surrogates;
  for (auto& id : ids) plan.attacks.push_back(AttackSpec{id, "", {{"max_queries", 50}}, open_threat_model(), false});
  for (auto& a : plan.attacks) {
    if (attack_kind(a.id) == AttackKind::Transfer) a.params = nlohmann::json::object();
  }
  plan.seeds_per_run = 10;
  plan.batch_size = 5;
  plan.budget = Budget::iterations(4);
  plan.master_seed = 3;
  return plan;
}

AttackTrace synthetic(const std::string& name, std::vector<double> asr, double step) {
  AttackTrace t;
  t.attack_id = name;
  t.attack = "i-fgsm";
  t.setting = "s";
  for (std::size_t i = 0; i < asr.size(); ++i) {
    t.rows.push_back({i + 1, step * static_cast<double>(i + 1), std::nullopt, std::nullopt, asr[i], 0});
  }
  return t;
}

}  // namespace

TEST(Harness, EvalAsrExamples) {
  auto net = support::two_class_linear(std::vector<double>{1.0}, 0.5);
  Oracle eval(net, FeedbackMode::hard_label(), OracleRole::Evaluation);
  ImageBatch x(4, Shape{1, 1, 1}, std::vector<double>{0.1, 0.9, 0.7, 0.2});
  const std::vector<std::size_t> truth = {0, 0, 0, 0};
  EXPECT_DOUBLE_EQ(eval_asr(x, eval, truth, Goal::Untargeted), 0.5);
  const std::vector<std::size_t> target = {1, 1, 0, 0};
  EXPECT_DOUBLE_EQ(eval_asr(x, eval, target, Goal::Targeted), 0.5);
  EXPECT_EQ(eval.query_count(), 0u);
  Oracle attack(net, FeedbackMode::hard_label());
  EXPECT_THROW(eval_asr(x, attack, truth, Goal::Untargeted), Error);
}

TEST(Harness, EvalAsrMatchesBruteForce) {
  const auto& f = fixture();
  Oracle eval(f.target, FeedbackMode::full_scores(), OracleRole::Evaluation);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto x = support::random_batch(15, f.data->images.shape(), seed);
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < 15; ++i) labels.push_back((seed + i) % f.data->classes);
    for (auto goal : {Goal::Untargeted, Goal::Targeted}) {
      double hits = 0.0;
      for (std::size_t i = 0; i < 15; ++i) {
        hits += goal_satisfied(argmax(f.target->logits(x.example(i))), labels[i], goal) ? 1.0 : 0.0;
      }
      EXPECT_DOUBLE_EQ(eval_asr(x, eval, labels, goal), hits / 15.0);
    }
  }
}

TEST(Harness, BestSoFarSeries) {
  const std::vector<AttackTrace> traces = {synthetic("a", {0.2, 0.5, 0.4}, 1.0)};
  const auto report = summarize(traces);
  EXPECT_EQ(report.attacks[0].asr, (std::vector<double>{0.2, 0.5, 0.4}));
  EXPECT_EQ(report.attacks[0].asr_best, (std::vector<double>{0.2, 0.5, 0.5}));
  EXPECT_DOUBLE_EQ(report.attacks[0].final_asr, 0.4);
}

TEST(Harness, SummarizeRejectsBadRows) {
  auto t = synthetic("a", {0.1, 0.2}, 1.0);
  t.rows[1].elapsed_s = t.rows[0].elapsed_s;
  EXPECT_THROW(summarize(std::vector{t}), Error);
  t = synthetic("a", {0.1, std::nan("")}, 1.0);
  EXPECT_THROW(summarize(std::vector{t}), Error);
}

TEST(Harness, MissingRepresentativeWarns) {
  auto t = synthetic("a", {0.1, 0.2}, 1.0);
  t.representative = 40;
  const auto r = summarize(std::vector{t});
  EXPECT_FALSE(r.attacks[0].representative.has_value());
  EXPECT_EQ(r.warnings.size(), 1u);
}

TEST(Harness, IterationAndTimeRankingsDiffer) {
  std::vector<double> ramp;
  for (int t = 1; t <= 10; ++t) ramp.push_back(t / 10.0);
  const std::vector<AttackTrace> traces = {synthetic("slow", ramp, 2.0), synthetic("fast", ramp, 1.0)};
  const auto r = summarize(traces);
  ASSERT_EQ(r.iteration_rankings.size(), 1u);
  EXPECT_EQ(r.iteration_rankings[0].entries[0].attack_id, "slow");
  EXPECT_EQ(r.time_rankings[0].entries[0].attack_id, "fast");
  EXPECT_DOUBLE_EQ(r.time_rankings[0].at, 9.0);
}

TEST(Harness, PlotCsvRoundTrip) {
  const std::vector<AttackTrace> traces = {synthetic("a", {0.1, 0.3}, 0.5), synthetic("b", {0.2, 0.4, 0.6}, 0.25),
                                           synthetic("c", {0.125}, 1.0 / 3.0)};
  const auto report = summarize(traces);
  const auto dir = std::filesystem::temp_directory_path() / "bbox_plot_test";
  std::filesystem::remove_all(dir);
  const auto files = emit_plot_data(report, dir);
  ASSERT_EQ(files.size(), 4u);
  for (const auto& file : files) {
    std::ifstream in(file);
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(std::count(header.begin(), header.end(), ','), 3) << file;
  }
  const auto back = read_plot_csv(dir / "asr_vs_time.csv");
  for (const auto& s : report.attacks) {
    const auto& pts = back.at(s.attack_id);
    ASSERT_EQ(pts.size(), s.asr.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
      EXPECT_EQ(pts[i].first, s.elapsed[i]);
      EXPECT_EQ(pts[i].second, s.asr[i]);
    }
  }
  EXPECT_TRUE(read_plot_csv(dir / "loss_vs_index.csv").at("a").empty());
  std::filesystem::remove_all(dir);
}

TEST(Harness, EmptyReportGivesHeaderOnly) {
  const auto dir = std::filesystem::temp_directory_path() / "bbox_plot_empty";
  std::filesystem::remove_all(dir);
  for (const auto& file : emit_plot_data(Report{}, dir)) {
    std::ifstream in(file);
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) ++lines;
    EXPECT_EQ(lines, 1);
  }
  const auto csv = summary_csv(Report{});
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1);
  std::filesystem::remove_all(dir);
}

TEST(Harness, IterationBudgetGivesOneRowPerIteration) {
  auto plan = small_plan({"i-fgsm", "mi-fgsm"});
  plan.budget = Budget::iterations(7);
  const auto result = run_benchmark(plan);
  for (const auto& t : result.traces) {
    ASSERT_EQ(t.rows.size(), 7u);
    for (std::size_t i = 0; i < 7; ++i) EXPECT_EQ(t.rows[i].index, i + 1);
  }
}

TEST(Harness, WallClockOvershootIsAtMostOneIteration) {
  auto plan = small_plan({"vmi-fgsm"});
  plan.seeds_per_run = 5;
  plan.budget = Budget::wall_clock(0.05);
  const auto result = run_benchmark(plan);
  const auto& s = result.report.attacks[0];
  ASSERT_GE(s.elapsed.size(), 2u);
  const double last_step = s.elapsed.back() - s.elapsed[s.elapsed.size() - 2];
  EXPECT_LT(s.elapsed[s.elapsed.size() - 2], 0.05);
  EXPECT_LE(s.elapsed.back() - 0.05, last_step);
}

TEST(Harness, QueryBudgetBoundsInteractiveAttacks) {
  auto plan = small_plan({"square", "rays"});
  plan.budget = Budget::queries(30);
  const auto result = run_benchmark(plan);
  for (const auto& t : result.traces) {
    EXPECT_EQ(t.kind, AttackKind::Query);
    for (auto q : t.queries_per_example) EXPECT_LE(q, 30u);
    for (std::size_t i = 1; i < t.rows.size(); ++i) EXPECT_GT(t.rows[i].index, t.rows[i - 1].index);
  }
}

TEST(Harness, ReportIsDeterministic) {
  auto plan = small_plan({"i-fgsm", "square", "signflip"});
  plan.settings = {setting_by_name("untargeted-16"), setting_by_name("targeted-16")};
  const auto a = report_json(run_benchmark(plan).report).dump();
  const auto b = report_json(run_benchmark(plan).report).dump();
  EXPECT_EQ(a, b);
  plan.threads = 3;
  const auto c = run_benchmark(plan);
  EXPECT_EQ(c.report.concurrency, "concurrent-3");
  auto jc = report_json(c.report);
  auto ja = nlohmann::json::parse(a);
  EXPECT_EQ(jc["attacks"], ja["attacks"]);
}

TEST(Harness, SeedsAreCorrectlyClassified) {
  const auto plan = small_plan({"i-fgsm"});
  const auto result = run_benchmark(plan);
  const auto& t = result.traces[0];
  EXPECT_EQ(t.seeds.size(), 10u);
  EXPECT_EQ(std::set<std::size_t>(t.seeds.begin(), t.seeds.end()).size(), 10u);
  for (auto idx : t.seeds) EXPECT_EQ(argmax(fixture().target->logits(fixture().data->images.example(idx))), fixture().data->labels[idx]);
  EXPECT_FALSE(result.report.log.empty());
}

TEST(Harness, ThreatModelViolationsAreRefusedUnlessOverridden) {
  auto plan = small_plan({"square"});
  plan.attacks[0].threat_model = ThreatModel{};
  try {
    run_benchmark(plan);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ThreatModelViolation);
  }
  plan.attacks[0].override_threat_model = true;
  plan.attacks[0].threat_model.access = Access::WithInteractiveAccess;
  plan.attacks[0].threat_model.feedback = FeedbackMode::hard_label();
  const auto result = run_benchmark(plan);
  EXPECT_TRUE(result.traces[0].override_used);
  EXPECT_FALSE(result.traces[0].violations.empty());
  bool logged = false;
  for (const auto& line : result.report.log) logged = logged || line.rfind("override:", 0) == 0;
  EXPECT_TRUE(logged);
}

TEST(Harness, ObserverSeesFeasibleIterates) {
  auto plan = small_plan({"mi-fgsm", "square", "nes"});
  std::size_t seen = 0;
  std::size_t bad = 0;
  plan.observer = [&](const IterateEvent& e) {
    ++seen;
    if (linf_distance(e.iterate, e.seed) > e.epsilon + 1e-6) ++bad;
  };
  run_benchmark(plan);
  EXPECT_GT(seen, 40u);
  EXPECT_EQ(bad, 0u);
}

TEST(Harness, TransferConfigParams) {
  const auto c = transfer_config("mi-fgsm", {{"iterations", 3}, {"momentum", 0.5}}, Goal::Targeted, 0.1);
  EXPECT_EQ(c.iterations, 3u);
  EXPECT_DOUBLE_EQ(c.params.momentum, 0.5);
  EXPECT_DOUBLE_EQ(c.budget.epsilon, 0.1);
  EXPECT_THROW(transfer_config("mi-fgsm", {{"momentun", 0.5}}, Goal::Targeted, 0.1), Error);
  EXPECT_THROW(transfer_config("ods-aug", nlohmann::json::object(), Goal::Targeted, 0.1), Error);
}

TEST(Harness, PersistTracesLayout) {
  const auto plan = small_plan({"i-fgsm", "square"});
  const auto result = run_benchmark(plan);
  const auto dir = std::filesystem::temp_directory_path() / "bbox_traces_test";
  std::filesystem::remove_all(dir);
  const auto files = persist_traces(result.traces, "p", dir);
  EXPECT_EQ(files.size(), 3u);
  for (const auto& f : files) EXPECT_TRUE(std::filesystem::exists(f));
  EXPECT_TRUE(std::filesystem::exists(dir / "p" / "i-fgsm@untargeted-16"));
  std::filesystem::remove_all(dir);
}

TEST(Harness, BudgetNames) {
  for (auto k : {BudgetKind::Iterations, BudgetKind::WallClock, BudgetKind::Queries}) {
    EXPECT_EQ(budget_kind_from_string(to_string(k)), k);
  }
  EXPECT_THROW(budget_kind_from_string("hours"), Error);
  EXPECT_THROW(Budget::iterations(0).validate(), Error);
  EXPECT_THROW((Budget{BudgetKind::Queries, 2.5}.validate()), Error);
}
