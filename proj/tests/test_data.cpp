#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "permadrop/data.hpp"

using namespace permadrop;

namespace {

Dataset parse(const std::string& text, const std::string& target = "target", bool require = true) {
  std::istringstream in(text);
  return parse_csv(in, target, require);
}

std::string error_of(const std::string& text) {
  try {
    parse(text);
  } catch (const std::runtime_error& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(Csv, SmallFile) {
  const auto ds = parse("x,target\n1,2\n3,4\n5.5,-6e-1\n");
  EXPECT_EQ(ds.rows(), 3u);
  EXPECT_EQ(ds.cols(), 1u);
  EXPECT_EQ(ds.feature_names, std::vector<std::string>{"x"});
  EXPECT_EQ(ds.targets, (std::vector<double>{2, 4, -0.6}));
  EXPECT_EQ(ds.features[2][0], 5.5);
}

TEST(Csv, TargetAnywhereAndColumnOrderKept) {
  const auto ds = parse("y, a ,b\r\n1,2,3\r\n", "y");
  EXPECT_EQ(ds.feature_names, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(ds.features[0], (std::vector<double>{2, 3}));
  EXPECT_EQ(ds.targets[0], 1.0);
}

TEST(Csv, NonNumericCellNamesRowAndColumn) {
  const auto msg = error_of("a,b,target\n1,2,3\n4,oops,6\n");
  EXPECT_NE(msg.find("row 2"), std::string::npos) << msg;
  EXPECT_NE(msg.find("'b'"), std::string::npos) << msg;
}

TEST(Csv, Errors) {
  EXPECT_NE(error_of("a,b\n1,2\n").find("target"), std::string::npos);
  EXPECT_NE(error_of("a,target\n1,2,3\n").find("row 1"), std::string::npos);
  EXPECT_NE(error_of("a,target\n1\n").find("row 1"), std::string::npos);
  EXPECT_FALSE(error_of("").empty());
  EXPECT_FALSE(error_of("a,target\nnan,1\n").empty());
  EXPECT_FALSE(error_of("a,target\n,1\n").empty());
  EXPECT_THROW(load_csv("/nonexistent/file.csv"), std::runtime_error);
}

TEST(Csv, OptionalTarget) {
  const auto ds = parse("a,b\n1,2\n", "target", false);
  EXPECT_EQ(ds.cols(), 2u);
  EXPECT_TRUE(ds.targets.empty());
}

TEST(Csv, RoundTripKeepsEveryDigit) {
  SynthConfig cfg;
  cfg.n = 50;
  const auto ds = synth_combo(cfg);
  const auto back = parse(to_csv(ds));
  EXPECT_EQ(back.features, ds.features);
  EXPECT_EQ(back.targets, ds.targets);
  EXPECT_EQ(back.feature_names, ds.feature_names);
  const auto path = (std::filesystem::temp_directory_path() / "permadrop_rt.csv").string();
  save_csv(path, ds);
  EXPECT_EQ(load_csv(path).features, ds.features);
  std::filesystem::remove(path);
}

TEST(InferSlices, GroupsBySuffix) {
  const auto s = infer_slices({"cell_0", "cell_1", "drug_a_0", "drug_a_1", "drug_b_0", "dose"});
  ASSERT_EQ(s.size(), 4u);
  EXPECT_EQ(s[0], (InputSlice{"cell", 0, 2}));
  EXPECT_EQ(s[1], (InputSlice{"drug_a", 2, 2}));
  EXPECT_EQ(s[2], (InputSlice{"drug_b", 4, 1}));
  EXPECT_EQ(s[3], (InputSlice{"dose", 5, 1}));
}

TEST(Synth, ShapeAndNames) {
  SynthConfig cfg;
  cfg.n = 10;
  cfg.cell_dim = 3;
  cfg.drug_dim = 2;
  const auto ds = synth_combo(cfg);
  EXPECT_EQ(ds.rows(), 10u);
  EXPECT_EQ(ds.cols(), 7u);
  EXPECT_EQ(ds.feature_names[3], "drug_a_0");
  EXPECT_EQ(infer_slices(ds.feature_names), ds.slices);
  cfg.drug_dim = 0;
  EXPECT_THROW(synth_combo(cfg), std::invalid_argument);
}

TEST(Synth, SymmetricInDrugs) {
  SynthConfig cfg;
  cfg.n = 100;
  const auto ds = synth_combo(cfg);
  for (const auto& row : ds.features) {
    auto swapped = row;
    std::swap_ranges(swapped.begin() + 8, swapped.begin() + 16, swapped.begin() + 16);
    EXPECT_EQ(combo_target(row, cfg), combo_target(swapped, cfg));
  }
}

TEST(Synth, DeterministicInSeed) {
  SynthConfig cfg;
  cfg.n = 30;
  cfg.noise_std = 0.0;
  const auto a = synth_combo(cfg);
  const auto b = synth_combo(cfg);
  EXPECT_EQ(a.features, b.features);
  EXPECT_EQ(a.targets, b.targets);
  cfg.seed = 1;
  EXPECT_NE(synth_combo(cfg).targets, a.targets);
}

TEST(Synth, ComponentFormulas) {
  const std::vector<double> c{0.5, -1.0};
  EXPECT_NEAR(synth::cell_effect(c), (std::sin(0.5) + std::sin(-1.0)) / std::sqrt(2.0), 1e-15);
  const std::vector<double> d{2.0};
  EXPECT_NEAR(synth::drug_effect(d), 1.0 + 0.75, 1e-15);
  EXPECT_NEAR(synth::interaction(std::vector<double>{1, 2}, std::vector<double>{3, -1}), 0.5 * 1.0 / std::sqrt(2.0),
              1e-15);
}

TEST(Synth, VarianceMatchesAnalyticValue) {
  // 1.44233235838169365 from (1 - e^-2)/2 + 0.75 + 0.25 + 0.1^2.
  EXPECT_NEAR(synth::target_variance(0.1), 1.44233235838169365, 1e-14);
  SynthConfig cfg;
  const auto ds = synth_combo(cfg);
  double m = 0.0;
  for (double t : ds.targets) m += t;
  m /= ds.rows();
  double v = 0.0;
  for (double t : ds.targets) v += (t - m) * (t - m);
  v /= ds.rows() - 1;
  EXPECT_NEAR(v, synth::target_variance(cfg.noise_std), 0.2 * synth::target_variance(cfg.noise_std));
}

TEST(Standardize, TrainColumnsAreUnit) {
  SynthConfig cfg;
  cfg.n = 300;
  auto ds = synth_combo(cfg);
  for (auto& r : ds.features) r[0] = 3.0 * r[0] + 7.0;
  const auto st = standardize(ds);
  for (std::size_t c = 0; c < ds.cols(); ++c) {
    double m = 0.0, v = 0.0;
    for (const auto& r : st.train.features) m += r[c];
    m /= ds.rows();
    for (const auto& r : st.train.features) v += (r[c] - m) * (r[c] - m);
    v /= ds.rows();
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(std::sqrt(v), 1.0, 1e-12);
  }
}

TEST(Standardize, ConstantFeaturePassesThrough) {
  const auto ds = parse("a,b,target\n5,1,0\n5,2,0\n5,4,0\n");
  const auto st = standardize(ds);
  for (const auto& r : st.train.features) EXPECT_EQ(r[0], 5.0);
}

TEST(Standardize, InverseRecoversHeldOut) {
  SynthConfig cfg;
  cfg.n = 200;
  const auto train_rows = synth_combo(cfg);
  cfg.seed = 3;
  cfg.n = 20;
  const auto held = synth_combo(cfg);
  const auto st = standardize(train_rows, {held});
  for (std::size_t r = 0; r < held.rows(); ++r) {
    const auto back = invert_scaler(st.scaler, st.others[0].features[r]);
    for (std::size_t c = 0; c < back.size(); ++c) EXPECT_NEAR(back[c], held.features[r][c], 1e-12);
  }
}

TEST(Split, IsAPartition) {
  SynthConfig cfg;
  cfg.n = 101;
  const auto ds = synth_combo(cfg);
  const auto [train_rows, test_rows] = train_test_split(ds, 0.3, 4);
  EXPECT_EQ(train_rows.rows() + test_rows.rows(), ds.rows());
  EXPECT_EQ(test_rows.rows(), 30u);
  std::multiset<double> all, parts;
  for (double t : ds.targets) all.insert(t);
  for (double t : train_rows.targets) parts.insert(t);
  for (double t : test_rows.targets) parts.insert(t);
  EXPECT_EQ(all, parts);
  const auto again = train_test_split(ds, 0.3, 4);
  EXPECT_EQ(again.second.targets, test_rows.targets);
  EXPECT_THROW(train_test_split(ds, 1.0, 0), std::invalid_argument);
}
