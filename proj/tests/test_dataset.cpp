#include <doctest.h>

#include <random>
#include <sstream>

#include "milpool/dataset.hpp"

using namespace milpool;

namespace {

Bag random_bag_with_labels(std::mt19937_64& engine, bool strong) {
  std::uniform_int_distribution<int> size(1, 9);
  std::normal_distribution<double> normal(0.0, 10.0);
  std::bernoulli_distribution coin(0.3);
  Bag bag;
  bag.id = "rec-" + std::to_string(engine() % 1000);
  const int n = size(engine);
  const int d = size(engine);
  const int c = size(engine);
  bag.features.resize(n, d);
  for (Eigen::Index i = 0; i < bag.features.size(); ++i) bag.features(i) = normal(engine);
  bag.bag_labels.assign(static_cast<std::size_t>(c), 0);
  if (strong) {
    LabelMatrix frames(n, c);
    for (Eigen::Index i = 0; i < frames.size(); ++i) frames(i) = coin(engine);
    for (int k = 0; k < c; ++k) bag.bag_labels[static_cast<std::size_t>(k)] = frames.col(k).any();
    bag.frame_labels = frames;
  } else {
    for (int& label : bag.bag_labels) label = coin(engine);
  }
  return bag;
}

}  // namespace

TEST_CASE("bags survive a JSON line round trip exactly") {
  std::mt19937_64 engine(1);
  for (int t = 0; t < 200; ++t) {
    const Bag bag = random_bag_with_labels(engine, t % 2 == 0);
    const std::string line = bag_to_json_line(bag);
    CHECK(line.find('\n') == std::string::npos);
    const Bag back = bag_from_json_line(line);
    CHECK(back.id == bag.id);
    CHECK(back.features == bag.features);
    CHECK(back.bag_labels == bag.bag_labels);
    CHECK(back.frame_labels == bag.frame_labels);
    CHECK(bag_to_json_line(back) == line);
  }
}

TEST_CASE("datasets round-trip through streams") {
  std::mt19937_64 engine(2);
  Dataset data;
  for (int t = 0; t < 10; ++t) {
    Bag bag = random_bag_with_labels(engine, true);
    bag.features = Matrix::Constant(4, 3, 0.1 * t);
    LabelMatrix frames = LabelMatrix::Zero(4, 2);
    frames(t % 4, t % 2) = 1;
    bag.frame_labels = frames;
    bag.bag_labels = {frames.col(0).any(), frames.col(1).any()};
    data.bags.push_back(bag);
  }
  std::stringstream stream;
  write_dataset(stream, data);
  const Dataset back = read_dataset(stream);
  REQUIRE(back.size() == data.size());
  CHECK(back.num_classes() == 2);
  CHECK(back.feature_dim() == 3);
  std::stringstream again;
  write_dataset(again, back);
  CHECK(again.str() == stream.str());
}

TEST_CASE("malformed records are rejected") {
  CHECK_THROWS_AS(bag_from_json_line("{"), DatasetError);
  CHECK_THROWS_AS(bag_from_json_line(R"({"id":"a","frames":2,"dims":1,"classes":1,)"
                                     R"("features":[1.0],"bag_labels":[0]})"),
                  DatasetError);
  // Bag label contradicts the frame labels.
  CHECK_THROWS_AS(bag_from_json_line(R"({"id":"a","frames":2,"dims":1,"classes":1,)"
                                     R"("features":[1.0,2.0],"bag_labels":[0],)"
                                     R"("frame_labels":[0,1]})"),
                  DatasetError);
  CHECK_THROWS_AS(bag_from_json_line(R"({"id":"a","frames":1,"dims":1,"classes":1,)"
                                     R"("features":[1.0],"bag_labels":[2]})"),
                  DatasetError);
}

TEST_CASE("inconsistent datasets are rejected") {
  Dataset data;
  CHECK_THROWS_AS(data.num_classes(), DatasetError);
  Bag a;
  a.id = "a";
  a.features = Matrix::Zero(2, 3);
  a.bag_labels = {0, 1};
  Bag b = a;
  b.id = "b";
  b.features = Matrix::Zero(2, 4);
  data.bags = {a, b};
  CHECK_THROWS_AS(validate(data), DatasetError);
}
