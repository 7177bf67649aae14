#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace snn;
using snn::testing::random_labels;
using snn::testing::TempDir;

namespace {

std::map<std::string, std::map<StackSpec, double>> results(
    std::initializer_list<std::pair<std::string, std::vector<std::pair<std::vector<std::string>, double>>>> in) {
  std::map<std::string, std::map<StackSpec, double>> out;
  for (const auto& [ds, rows] : in) {
    for (const auto& [ids, acc] : rows) out[ds][StackSpec::make(ids)] = acc;
  }
  return out;
}

}  // namespace

TEST(Confusion, HandExample) {
  const std::vector<std::uint32_t> labels = {0, 0, 1}, preds = {0, 1, 1};
  const auto cm = confusion(preds, labels, 2);
  EXPECT_EQ(cm.counts(0, 0), 1u);
  EXPECT_EQ(cm.counts(0, 1), 1u);
  EXPECT_EQ(cm.counts(1, 0), 0u);
  EXPECT_EQ(cm.counts(1, 1), 1u);
  EXPECT_EQ(cm.trace(), 2u);
}

TEST(Confusion, AllCorrectIsDiagonal) {
  const std::vector<std::uint32_t> y = {0, 1, 2, 2, 1};
  const auto cm = confusion(y, y, 3);
  EXPECT_EQ(cm.trace(), 5u);
  EXPECT_EQ(cm.total(), 5u);
  EXPECT_EQ(cm.counts(0, 1), 0u);
}

TEST(Confusion, Errors) {
  const std::vector<std::uint32_t> a = {0, 1}, b = {0};
  EXPECT_THROW(confusion(a, b, 2), Error);
  EXPECT_THROW(confusion(a, a, 1), Error);
}

TEST(Confusion, PropertiesOnRandomVectors) {
  Rng rng(1);
  for (int t = 0; t < 200; ++t) {
    const std::size_t C = 1 + rng.index(8), n = rng.index(100);
    const auto y = random_labels(n, C, rng);
    const auto p = random_labels(n, C, rng);
    const auto cm = confusion(p, y, C);
    ASSERT_EQ(cm.total(), n);
    if (n > 0) ASSERT_EQ(cm.accuracy(), accuracy(p, y));
    for (std::size_t x = 0; x < C; ++x) {
      std::uint64_t row = 0;
      for (std::size_t j = 0; j < C; ++j) row += cm.counts(x, j);
      ASSERT_EQ(row, static_cast<std::uint64_t>(std::count(y.begin(), y.end(), x)));
    }
  }
}

TEST(Confusion, CsvShapeAndRoundTrip) {
  Rng rng(2);
  const auto y = random_labels(50, 4, rng);
  const auto p = random_labels(50, 4, rng);
  const auto cm = confusion(p, y, 4, {"bed", "bath", "kitchen", "office"});
  const auto csv = confusion_csv(cm);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  EXPECT_EQ(confusion_from_csv(csv), cm);
  const auto j = to_json(cm);
  EXPECT_EQ(j.at("counts").size(), 4u);
  EXPECT_EQ(j.at("accuracy").get<double>(), cm.accuracy());
}

TEST(Degradation, Examples) {
  const auto one = degradation_table(results({{"d", {{{"a"}, 0.7}}}}));
  ASSERT_EQ(one.rows.size(), 1u);
  EXPECT_EQ(one.rows[0].degradation, 0.0);

  const auto t = degradation_table(results({{"d", {{{"a"}, 0.9}, {{"b"}, 0.8}}}}));
  ASSERT_EQ(t.summary.size(), 2u);
  EXPECT_EQ(t.summary[0].spec.key(), "a");
  EXPECT_EQ(t.summary[0].mean, 0.0);
  EXPECT_NEAR(t.summary[1].mean, 0.1, 1e-15);
  EXPECT_THROW(degradation_table({}), Error);
}

TEST(Degradation, MeanStdAndOrdering) {
  const auto t = degradation_table(results({
      {"mit", {{{"A"}, 0.6}, {{"B"}, 0.7}, {{"A", "B"}, 0.8}}},
      {"caltech", {{{"A"}, 0.9}, {{"B"}, 0.5}, {{"A", "B"}, 0.85}}},
  }));
  ASSERT_EQ(t.summary.size(), 3u);
  EXPECT_EQ(t.summary[0].spec.key(), "A+B");
  EXPECT_NEAR(t.summary[0].mean, 0.025, 1e-12);
  EXPECT_NEAR(t.summary[0].stddev, 0.025, 1e-12);
  EXPECT_EQ(t.summary[1].spec.key(), "A");
  EXPECT_NEAR(t.summary[1].mean, 0.1, 1e-12);
  EXPECT_EQ(t.summary[2].spec.key(), "B");
  EXPECT_EQ(t.rows.size(), 6u);
  for (std::size_t i = 1; i < t.summary.size(); ++i) EXPECT_LE(t.summary[i - 1].mean, t.summary[i].mean);
}

TEST(Degradation, OneZeroRowPerDatasetWithDistinctAccuracies) {
  Rng rng(3);
  const std::vector<std::string> nets = {"a", "b", "c", "d"};
  for (int t = 0; t < 50; ++t) {
    std::map<std::string, std::map<StackSpec, double>> res;
    for (int ds = 0; ds < 3; ++ds) {
      for (const auto& s : enumerate_subsets(nets)) {
        res["ds" + std::to_string(ds)][s] = rng.uniform();
      }
    }
    const auto table = degradation_table(res);
    std::map<std::string, int> zeros;
    for (const auto& r : table.rows) {
      ASSERT_GE(r.degradation, 0.0);
      zeros[r.dataset] += r.degradation == 0.0;
    }
    for (const auto& [ds, z] : zeros) ASSERT_EQ(z, 1) << ds;
  }
}

TEST(Degradation, CsvRoundTripsNumerically) {
  const auto t = degradation_table(results({
      {"mit", {{{"A"}, 0.61234567891}, {{"B"}, 0.7}}},
      {"sun", {{{"A"}, 0.3}, {{"B"}, 0.123456789012}}},
  }));
  const auto csv = io::parse_csv(degradation_csv(t));
  ASSERT_EQ(csv.rows.size(), t.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    EXPECT_EQ(csv.rows[i][0], t.rows[i].spec.key());
    EXPECT_NEAR(io::parse_double(csv.rows[i][2], "acc"), t.rows[i].accuracy, 1e-9);
    EXPECT_NEAR(io::parse_double(csv.rows[i][3], "deg"), t.rows[i].degradation, 1e-9);
  }
}

TEST(Degradation, JsonCarriesStackSpec) {
  const auto t = degradation_table(results({{"d", {{{"NIN", "VGG16"}, 0.9}}}}));
  const auto j = to_json(t);
  EXPECT_EQ(j.at("summary")[0].at("stack_spec").get<StackSpec>(), StackSpec::make({"NIN", "VGG16"}));
}

TEST(Results, JsonInput) {
  const auto j = nlohmann::json::parse(R"({"datasets": {"mit": [{"networks": ["B","A"], "accuracy": 0.8},
                                                                {"networks": ["A"], "accuracy": 0.6}]}})");
  const auto r = results_from_json(j);
  EXPECT_EQ(r.at("mit").at(StackSpec::make({"A", "B"})), 0.8);
  EXPECT_THROW(results_from_json(nlohmann::json::parse(R"({"rows": []})")), Error);
}

TEST(Emit, JsonRoundTripAndAtomicity) {
  TempDir dir;
  const nlohmann::json j = {{"a", 1.5}, {"b", {1, 2, 3}}};
  emit(dir / "r.json", j);
  EXPECT_EQ(nlohmann::json::parse(io::read_file(dir / "r.json")), j);
  EXPECT_FALSE(std::filesystem::exists(dir / "r.json.tmp"));
  EXPECT_THROW(emit(dir / "no" / "r.json", j), Error);
  EXPECT_EQ(parse_format("csv"), Format::csv);
  EXPECT_THROW(parse_format("xml"), Error);
}

TEST(FormatDouble, ShortestRoundTrip) {
  Rng rng(4);
  for (int t = 0; t < 1000; ++t) {
    const double v = rng.normal() * std::pow(10.0, rng.index(20) - 10.0);
    ASSERT_EQ(io::parse_double(io::format_double(v), "v"), v);
  }
  EXPECT_EQ(io::format_double(0.1), "0.1");
}
