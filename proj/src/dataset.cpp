#include "milpool/dataset.hpp"

#include <json.hpp>

#include <fstream>
#include <istream>
#include <ostream>

namespace milpool {

using nlohmann::json;

int Dataset::num_classes() const {
  if (bags.empty()) throw DatasetError("empty dataset");
  return bags.front().num_classes();
}

int Dataset::feature_dim() const {
  if (bags.empty()) throw DatasetError("empty dataset");
  return static_cast<int>(bags.front().features.cols());
}

void validate(const Bag& bag) {
  const auto where = [&] { return "bag '" + bag.id + "': "; };
  if (bag.features.rows() < 1) throw DatasetError(where() + "no frames");
  if (!bag.features.allFinite()) {
    throw DatasetError(where() + "non-finite feature");
  }
  for (int t : bag.bag_labels) {
    if (t != 0 && t != 1) throw DatasetError(where() + "bag label not in {0,1}");
  }
  if (!bag.frame_labels) return;
  const LabelMatrix& frames = *bag.frame_labels;
  if (frames.rows() != bag.features.rows() ||
      frames.cols() != static_cast<Eigen::Index>(bag.bag_labels.size())) {
    throw DatasetError(where() + "frame label shape mismatch");
  }
  if ((frames.array() < 0).any() || (frames.array() > 1).any()) {
    throw DatasetError(where() + "frame label not in {0,1}");
  }
  for (int c = 0; c < frames.cols(); ++c) {
    const int any = frames.col(c).maxCoeff();
    if (any != bag.bag_labels[c]) {
      throw DatasetError(where() + "bag label of class " + std::to_string(c) +
                         " is not the union of its frame labels");
    }
  }
}

void validate(const Dataset& dataset) {
  if (dataset.empty()) throw DatasetError("empty dataset");
  const int classes = dataset.num_classes();
  const int dims = dataset.feature_dim();
  for (const Bag& bag : dataset.bags) {
    validate(bag);
    if (bag.num_classes() != classes || bag.features.cols() != dims) {
      throw DatasetError("bag '" + bag.id + "': shape differs from dataset");
    }
  }
}

std::string bag_to_json_line(const Bag& bag) {
  const auto n = bag.features.rows();
  const auto d = bag.features.cols();
  const auto c = static_cast<Eigen::Index>(bag.bag_labels.size());
  std::vector<double> features;
  features.reserve(static_cast<std::size_t>(n * d));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) features.push_back(bag.features(i, j));
  }
  json j = {{"id", bag.id},
            {"frames", n},
            {"dims", d},
            {"classes", c},
            {"features", features},
            {"bag_labels", bag.bag_labels}};
  if (bag.frame_labels) {
    std::vector<int> labels;
    labels.reserve(static_cast<std::size_t>(n * c));
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index k = 0; k < c; ++k) labels.push_back((*bag.frame_labels)(i, k));
    }
    j["frame_labels"] = labels;
  }
  return j.dump();
}

Bag bag_from_json_line(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw DatasetError(std::string("malformed dataset line: ") + e.what());
  }
  try {
    Bag bag;
    bag.id = j.at("id").get<std::string>();
    const auto n = j.at("frames").get<Eigen::Index>();
    const auto d = j.at("dims").get<Eigen::Index>();
    const auto c = j.at("classes").get<Eigen::Index>();
    if (n < 1 || d < 1 || c < 1) {
      throw DatasetError("bag '" + bag.id + "': frames, dims and classes must be >= 1");
    }
    const auto features = j.at("features").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(features.size()) != n * d) {
      throw DatasetError("bag '" + bag.id + "': feature count != frames*dims");
    }
    bag.features.resize(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index k = 0; k < d; ++k) {
        bag.features(i, k) = features[static_cast<std::size_t>(i * d + k)];
      }
    }
    bag.bag_labels = j.at("bag_labels").get<std::vector<int>>();
    if (static_cast<Eigen::Index>(bag.bag_labels.size()) != c) {
      throw DatasetError("bag '" + bag.id + "': bag_labels length != classes");
    }
    if (j.contains("frame_labels")) {
      const auto labels = j.at("frame_labels").get<std::vector<int>>();
      if (static_cast<Eigen::Index>(labels.size()) != n * c) {
        throw DatasetError("bag '" + bag.id + "': frame_labels count != frames*classes");
      }
      LabelMatrix frames(n, c);
      for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index k = 0; k < c; ++k) {
          frames(i, k) = labels[static_cast<std::size_t>(i * c + k)];
        }
      }
      bag.frame_labels = std::move(frames);
    }
    validate(bag);
    return bag;
  } catch (const json::exception& e) {
    throw DatasetError(std::string("invalid dataset record: ") + e.what());
  }
}

void write_dataset(std::ostream& out, const Dataset& dataset) {
  for (const Bag& bag : dataset.bags) out << bag_to_json_line(bag) << '\n';
}

Dataset read_dataset(std::istream& in) {
  Dataset dataset;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    dataset.bags.push_back(bag_from_json_line(line));
  }
  validate(dataset);
  return dataset;
}

void save_dataset(const std::filesystem::path& path, const Dataset& dataset) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DatasetError("cannot write " + path.string());
  write_dataset(out, dataset);
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot read " + path.string());
  return read_dataset(in);
}

}  // namespace milpool
