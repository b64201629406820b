#ifndef MILPOOL_DATASET_HPP_
#define MILPOOL_DATASET_HPP_

#include <Eigen/Dense>

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace milpool {

using Matrix = Eigen::MatrixXd;
using LabelMatrix = Eigen::MatrixXi;

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One recording. Rows of `features` and `frame_labels` are frames.
struct Bag {
  std::string id;
  Matrix features;                         // n x D
  std::vector<int> bag_labels;             // C, entries in {0, 1}
  std::optional<LabelMatrix> frame_labels; // n x C, evaluation only

  int num_frames() const { return static_cast<int>(features.rows()); }
  int num_classes() const { return static_cast<int>(bag_labels.size()); }
};

struct Dataset {
  std::vector<Bag> bags;

  bool empty() const { return bags.empty(); }
  std::size_t size() const { return bags.size(); }
  // Both throw DatasetError on an empty or inconsistent dataset.
  int num_classes() const;
  int feature_dim() const;
};

// Checks shapes, binary labels and, when frame labels are present, that each
// bag label is the union of its frame labels.
void validate(const Bag& bag);
void validate(const Dataset& dataset);

// Line-delimited JSON, one bag per line:
//   {"id":..., "frames":n, "dims":D, "classes":C, "features":[n*D row-major],
//    "bag_labels":[C], "frame_labels":[n*C row-major] (optional)}
std::string bag_to_json_line(const Bag& bag);
Bag bag_from_json_line(const std::string& line);

void write_dataset(std::ostream& out, const Dataset& dataset);
Dataset read_dataset(std::istream& in);
void save_dataset(const std::filesystem::path& path, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace milpool

#endif  // MILPOOL_DATASET_HPP_
