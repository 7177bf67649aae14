#include <gtest/gtest.h>

#include <set>

#include "test_util.hpp"

using namespace snn;

namespace {

FeatureMatrix block(const std::string& id, std::size_t n, std::size_t d, float fill) {
  return {id, "ds", Matrix<float>(n, d, fill)};
}

FeatureMatrix random_block(const std::string& id, std::size_t n, std::size_t d, Rng& rng) {
  FeatureMatrix m{id, "ds", Matrix<float>(n, d)};
  for (auto& v : m.data.values()) v = static_cast<float>(rng.normal());
  return m;
}

}  // namespace

TEST(Normalize, ThreeFourFive) {
  FeatureMatrix m{"A", "ds", Matrix<float>{{3, 4}}};
  const auto r = l2_normalize_rows(m);
  EXPECT_FLOAT_EQ(r.data(0, 0), 0.6f);
  EXPECT_FLOAT_EQ(r.data(0, 1), 0.8f);
}

TEST(Normalize, UnitRowUnchangedAndZeroRowStaysZero) {
  FeatureMatrix m{"A", "ds", Matrix<float>{{1, 0, 0}, {0, 0, 0}, {1e-20f, 0, 0}}};
  const auto r = l2_normalize_rows(m);
  EXPECT_EQ(r.data(0, 0), 1.0f);
  EXPECT_EQ(r.data(0, 1), 0.0f);
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_EQ(r.data(1, j), 0.0f);
    EXPECT_EQ(r.data(2, j), 0.0f);
  }
}

TEST(Normalize, RandomRowsHaveUnitNorm) {
  Rng rng(1);
  const auto r = l2_normalize_rows(random_block("A", 50, 7, rng));
  for (std::size_t i = 0; i < r.n(); ++i) {
    double sq = 0;
    for (float v : r.data.row(i)) sq += double(v) * v;
    EXPECT_NEAR(std::sqrt(sq), 1.0, 1e-6);
  }
}

TEST(Stack, SingleMatrixIdentity) {
  Rng rng(2);
  const auto m = random_block("A", 5, 3, rng);
  const auto s = stack({m});
  EXPECT_EQ(s.data, m.data);
}

TEST(Stack, DimensionsAndCanonicalOrder) {
  const auto s = stack({block("VGG16", 4, 3, 2.0f), block("NIN", 4, 2, 1.0f)});
  EXPECT_EQ(s.d(), 5u);
  EXPECT_EQ(s.network_id, "NIN+VGG16");
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(s.data(i, 0), 1.0f);
    EXPECT_EQ(s.data(i, 1), 1.0f);
    EXPECT_EQ(s.data(i, 2), 2.0f);
    EXPECT_EQ(s.data(i, 4), 2.0f);
  }
}

TEST(Stack, WeightsScaleBlocks) {
  const auto s = stack({block("GoogLeNet", 3, 2, 1.0f), block("VGG16", 3, 3, 1.0f)}, std::vector<double>{0.5, 1.0});
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(s.data(i, 0), 0.5f);
    EXPECT_EQ(s.data(i, 1), 0.5f);
    for (std::size_t j = 2; j < 5; ++j) EXPECT_EQ(s.data(i, j), 1.0f);
  }
}

TEST(Stack, WeightsFollowTheirMatrixWhenReordered) {
  const auto s = stack({block("VGG16", 2, 1, 1.0f), block("GoogLeNet", 2, 1, 1.0f)}, std::vector<double>{1.0, 0.5});
  EXPECT_EQ(s.data(0, 0), 0.5f);  // GoogLeNet first
  EXPECT_EQ(s.data(0, 1), 1.0f);
}

TEST(Stack, SampleCountMismatch) {
  EXPECT_THROW(
      {
        try {
          stack({block("A", 3, 2, 1), block("B", 4, 2, 1)});
        } catch (const Error& e) {
          EXPECT_NE(std::string(e.what()).find("sample count mismatch"), std::string::npos);
          throw;
        }
      },
      Error);
}

TEST(StackProperties, AdditivityOnesAndPermutation) {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    const std::size_t k = 1 + rng.index(4), n = 1 + rng.index(10);
    std::vector<FeatureMatrix> ms;
    std::size_t total = 0;
    for (std::size_t i = 0; i < k; ++i) {
      const auto d = 1 + rng.index(6);
      total += d;
      ms.push_back(random_block("net" + std::to_string(i), n, d, rng));
    }
    const auto plain = stack(ms);
    EXPECT_EQ(plain.d(), total);
    EXPECT_EQ(stack(ms, std::vector<double>(k, 1.0)).data, plain.data);
    auto shuffled = ms;
    rng.shuffle(std::span<FeatureMatrix>(shuffled));
    EXPECT_EQ(stack(shuffled).data, plain.data);
  }
}

TEST(StackSpec, CanonicalAndValidated) {
  const auto s = StackSpec::make({"VGG16", "NIN"}, std::vector<double>{1.0, 0.5});
  EXPECT_EQ(s.networks(), (std::vector<std::string>{"NIN", "VGG16"}));
  EXPECT_EQ(*s.weights(), (std::vector<double>{0.5, 1.0}));
  EXPECT_EQ(s.key(), "NIN+VGG16");
  EXPECT_THROW(StackSpec::make({}), Error);
  EXPECT_THROW(StackSpec::make({"A", "A"}), Error);
  EXPECT_THROW(StackSpec::make({"A", "B"}, std::vector<double>{0.5, 0.5}), Error);
  EXPECT_THROW(StackSpec::make({"A", "B"}, std::vector<double>{0.0, 1.0}), Error);
  EXPECT_THROW(StackSpec::make({"A"}, std::vector<double>{1.0, 1.0}), Error);
}

TEST(StackSpec, JsonRoundTrip) {
  const auto w = StackSpec::make({"B", "A"}, std::vector<double>{0.25, 1.0});
  nlohmann::json j = w;
  EXPECT_EQ(j.at("networks"), nlohmann::json::array({"A", "B"}));
  EXPECT_EQ(j.get<StackSpec>(), w);
  const auto u = StackSpec::make({"X"});
  nlohmann::json ju = u;
  EXPECT_TRUE(ju.at("weights").is_null());
  EXPECT_EQ(ju.get<StackSpec>(), u);
}

TEST(Subsets, TwoNetworks) {
  const auto s = enumerate_subsets({"VGG16", "NIN"});
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s[0].key(), "NIN");
  EXPECT_EQ(s[1].key(), "VGG16");
  EXPECT_EQ(s[2].key(), "NIN+VGG16");
}

TEST(Subsets, CountsAndDistinctness) {
  const std::vector<std::string> all = {"AlexNet", "GoogLeNet", "NIN", "VGG16", "VGG19"};
  for (std::size_t n = 1; n <= all.size(); ++n) {
    std::vector<std::string> ids(all.begin(), all.begin() + n);
    const auto s = enumerate_subsets(ids);
    EXPECT_EQ(s.size(), (1u << n) - 1);
    std::set<std::string> keys;
    for (const auto& x : s) keys.insert(x.key());
    EXPECT_EQ(keys.size(), s.size());
    for (std::size_t i = 1; i < s.size(); ++i) EXPECT_LE(s[i - 1].size(), s[i].size());
  }
  EXPECT_EQ(enumerate_subsets({"VGG16"}).front(), StackSpec::make({"VGG16"}));
  EXPECT_THROW(enumerate_subsets({}), Error);
}

TEST(AccuracyWeights, WorkedExamples) {
  const auto w = accuracy_weights({{"GoogLeNet", 0.3}, {"VGG16", 0.6}});
  EXPECT_EQ(w.at("GoogLeNet"), 0.5);
  EXPECT_EQ(w.at("VGG16"), 1.0);
  const auto e = accuracy_weights({{"a", 0.7}, {"b", 0.7}, {"c", 0.7}});
  for (const auto& [id, v] : e) EXPECT_EQ(v, 1.0);
  const auto d = accuracy_weights({{"a", 0.25}, {"b", 0.5}, {"c", 1.0}});
  EXPECT_EQ(d.at("a"), 0.25);
  EXPECT_EQ(d.at("b"), 0.5);
  EXPECT_EQ(d.at("c"), 1.0);
  EXPECT_THROW(accuracy_weights({{"a", 0.0}, {"b", 0.5}}), Error);
}

TEST(AccuracyWeights, ScaleInvariant) {
  Rng rng(4);
  for (int t = 0; t < 100; ++t) {
    std::map<std::string, double> accs, scaled, pow2;
    const double k = 0.1 + 5 * rng.uniform();
    for (int i = 0; i < 4; ++i) {
      const double a = 0.05 + 0.95 * rng.uniform();
      accs["n" + std::to_string(i)] = a;
      scaled["n" + std::to_string(i)] = a * k;
      pow2["n" + std::to_string(i)] = a * 0.25;
    }
    const auto w = accuracy_weights(accs);
    const auto ws = accuracy_weights(scaled);
    EXPECT_EQ(accuracy_weights(pow2), w);
    for (const auto& [id, v] : w) EXPECT_NEAR(ws.at(id), v, 1e-15);
    double mx = 0;
    for (const auto& [id, v] : ws) mx = std::max(mx, v);
    EXPECT_EQ(mx, 1.0);
  }
}

TEST(WeightedStack, AppliedAfterNormalization) {
  const auto b = generate_synthetic(complementary_spec(), 2);
  const auto spec = weighted_stack({{"A", 0.3}, {"B", 0.6}});
  const auto x = stacked_features(b, spec);
  const auto d = b.network("A").d();
  double sa = 0, sb = 0;
  for (std::size_t j = 0; j < x.d(); ++j) (j < d ? sa : sb) += double(x.data(0, j)) * x.data(0, j);
  EXPECT_NEAR(std::sqrt(sa), 0.5, 1e-6);
  EXPECT_NEAR(std::sqrt(sb), 1.0, 1e-6);
}
