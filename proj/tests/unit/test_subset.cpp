#include <catch2/catch_amalgamated.hpp>

#include <mfblue/rng.hpp>
#include <mfblue/subset.hpp>

using namespace mfblue;

TEST_CASE("subsets are stored sorted without duplicates") {
  const ModelSubset s{3, 1, 3, 2};
  REQUIRE(s.size() == 3);
  REQUIRE(s[0] == 1);
  REQUIRE(s[2] == 3);
  REQUIRE(s == ModelSubset({1, 2, 3}));
  REQUIRE(s.to_string() == "{1,2,3}");
}

TEST_CASE("restriction matrix selects target components") {
  const ModelSubset universe{0, 1, 2, 3, 4};
  const ModelSubset target{1, 3};
  const Eigen::MatrixXd r = restriction_matrix(universe, target);
  REQUIRE(r.rows() == 2);
  REQUIRE(r.cols() == 5);
  Eigen::MatrixXd expected = Eigen::MatrixXd::Zero(2, 5);
  expected(0, 1) = 1.0;
  expected(1, 3) = 1.0;
  REQUIRE((r - expected).cwiseAbs().maxCoeff() == 0.0);

  REQUIRE(restriction_matrix({0}, {0}).isApprox(Eigen::MatrixXd::Identity(1, 1)));
  REQUIRE(restriction_matrix({0, 1}, {0, 1}).isApprox(Eigen::MatrixXd::Identity(2, 2)));
}

TEST_CASE("restriction matrix rejects non-subsets") {
  REQUIRE_THROWS_AS(restriction_matrix({0, 1}, {2}), NotASubset);
}

TEST_CASE("restriction selects vector components for random subsets") {
  RngStream stream(11);
  const ModelSubset universe = ModelSubset::range(0, 7);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<ModelIndex> members;
    for (int i = 0; i <= 7; ++i)
      if (stream.uniform01() < 0.5) members.push_back(i);
    if (members.empty()) members.push_back(3);
    const ModelSubset target(members);
    Eigen::VectorXd v(8);
    for (int i = 0; i < 8; ++i) v[i] = stream.normal();
    const Eigen::VectorXd selected = restriction_matrix(universe, target) * v;
    for (int j = 0; j < target.size(); ++j) REQUIRE(selected[j] == v[target[j]]);
  }
}

TEST_CASE("enumerate_subsets order and counts") {
  const auto small = enumerate_subsets(2, 2);
  REQUIRE(small.size() == 3);
  REQUIRE(small[0] == ModelSubset{1});
  REQUIRE(small[1] == ModelSubset{2});
  REQUIRE(small[2] == ModelSubset({1, 2}));

  REQUIRE(enumerate_subsets(12, 4).size() == 793);

  const auto singles = enumerate_subsets(3, 1);
  REQUIRE(singles.size() == 3);
  for (int i = 0; i < 3; ++i) REQUIRE(singles[static_cast<std::size_t>(i)].size() == 1);
}

TEST_CASE("enumerate_subsets count equals binomial sums") {
  auto choose = [](int n, int k) {
    double c = 1.0;
    for (int i = 0; i < k; ++i) c = c * (n - i) / (i + 1);
    return static_cast<long>(c + 0.5);
  };
  for (int n = 1; n <= 8; ++n) {
    for (int cap = 1; cap <= n; ++cap) {
      long expected = 0;
      for (int i = 1; i <= cap; ++i) expected += choose(n, i);
      REQUIRE(static_cast<long>(enumerate_subsets(n, cap).size()) == expected);
    }
  }
}

TEST_CASE("enumerate_subsets validates arguments") {
  REQUIRE_THROWS_AS(enumerate_subsets(3, 0), OutOfDomain);
  REQUIRE_THROWS_AS(enumerate_subsets(3, 4), OutOfDomain);
}
