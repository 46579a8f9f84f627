#include "arcl/data.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <string>

#include "arcl/errors.hpp"

namespace arcl {

Dataset Dataset::subset(const std::vector<std::size_t>& rows) const {
  Dataset out;
  out.inputs.resize(static_cast<Eigen::Index>(rows.size()), inputs.cols());
  out.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.inputs.row(static_cast<Eigen::Index>(i)) = inputs.row(static_cast<Eigen::Index>(rows[i]));
    out.labels.push_back(labels[rows[i]]);
  }
  return out;
}

Dataset concat(const std::vector<Dataset>& parts) {
  Dataset out;
  Eigen::Index rows = 0;
  Eigen::Index width = parts.empty() ? 0 : parts.front().inputs.cols();
  for (const auto& p : parts) {
    if (p.inputs.cols() != width) throw DimensionError("concat: datasets differ in input width");
    rows += p.inputs.rows();
  }
  out.inputs.resize(rows, width);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.inputs.middleRows(at, p.inputs.rows()) = p.inputs;
    at += p.inputs.rows();
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
  }
  return out;
}

TaskStream make_synthetic_stream(const SyntheticSpec& spec) {
  if (spec.num_classes <= 0 || spec.num_tasks <= 0 || spec.num_classes % spec.num_tasks != 0) {
    throw ConfigError("make_synthetic_stream: num_classes " + std::to_string(spec.num_classes) +
                      " is not divisible by num_tasks " + std::to_string(spec.num_tasks));
  }
  if (spec.input_dim <= 0 || spec.per_class_train <= 0 || spec.per_class_test < 0) {
    throw ConfigError("make_synthetic_stream: sizes must be positive");
  }
  if (!(spec.spread >= 0.0)) throw ConfigError("make_synthetic_stream: spread must be >= 0");

  Rng rng(spec.seed);
  std::uniform_real_distribution<double> center_dist(0.2, 0.8);
  Matrix centers(spec.num_classes, spec.input_dim);
  for (Eigen::Index i = 0; i < centers.size(); ++i) centers.data()[i] = center_dist(rng);

  auto draw = [&](int per_class) {
    Dataset d;
    d.inputs.resize(static_cast<Eigen::Index>(spec.num_classes) * per_class, spec.input_dim);
    std::normal_distribution<double> noise(0.0, spec.spread > 0.0 ? spec.spread : 1.0);
    Eigen::Index row = 0;
    for (int c = 0; c < spec.num_classes; ++c) {
      for (int s = 0; s < per_class; ++s, ++row) {
        for (int j = 0; j < spec.input_dim; ++j) {
          const double offset = spec.spread > 0.0 ? noise(rng) : 0.0;
          d.inputs(row, j) = std::clamp(centers(c, j) + offset, 0.0, 1.0);
        }
        d.labels.push_back(c);
      }
    }
    return d;
  };
  const Dataset train = draw(spec.per_class_train);
  const Dataset test = draw(spec.per_class_test);
  return split_by_class(train, test, spec.num_tasks, spec.num_classes);
}

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("load_idx: cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset,
                        const std::filesystem::path& path) {
  if (offset + 4 > bytes.size()) {
    throw FormatError("load_idx: " + path.string() + " truncated at offset " + std::to_string(offset));
  }
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto img = read_file(images);
  const auto lab = read_file(labels);

  const std::uint32_t img_magic = read_be32(img, 0, images);
  if (img_magic != 0x00000803u) {
    throw FormatError("load_idx: " + images.string() + " has image magic " + std::to_string(img_magic) +
                      " at offset 0, expected 2051");
  }
  const std::uint32_t n = read_be32(img, 4, images);
  const std::uint32_t rows = read_be32(img, 8, images);
  const std::uint32_t cols = read_be32(img, 12, images);

  const std::uint32_t lab_magic = read_be32(lab, 0, labels);
  if (lab_magic != 0x00000801u) {
    throw FormatError("load_idx: " + labels.string() + " has label magic " + std::to_string(lab_magic) +
                      " at offset 0, expected 2049");
  }
  const std::uint32_t n_labels = read_be32(lab, 4, labels);
  if (n_labels != n) {
    throw FormatError("load_idx: image count " + std::to_string(n) + " (offset 4 of " + images.string() +
                      ") does not match label count " + std::to_string(n_labels) + " (offset 4 of " +
                      labels.string() + ")");
  }

  const std::size_t pixels = std::size_t{rows} * cols;
  const std::size_t img_need = 16 + std::size_t{n} * pixels;
  if (img.size() < img_need) {
    throw FormatError("load_idx: " + images.string() + " truncated at offset " + std::to_string(img.size()) +
                      ", expected " + std::to_string(img_need) + " bytes");
  }
  if (lab.size() < 8 + std::size_t{n}) {
    throw FormatError("load_idx: " + labels.string() + " truncated at offset " + std::to_string(lab.size()) +
                      ", expected " + std::to_string(8 + std::size_t{n}) + " bytes");
  }

  Dataset d;
  d.inputs.resize(n, static_cast<Eigen::Index>(pixels));
  for (std::size_t i = 0; i < std::size_t{n} * pixels; ++i) d.inputs.data()[i] = img[16 + i] / 255.0;
  d.labels.reserve(n);
  for (std::size_t i = 0; i < n; ++i) d.labels.push_back(lab[8 + i]);
  return d;
}

std::vector<Dataset> split_by_class(const Dataset& dataset, int num_tasks, int num_classes) {
  if (num_classes <= 0) {
    num_classes = dataset.labels.empty() ? 0 : *std::max_element(dataset.labels.begin(), dataset.labels.end()) + 1;
  }
  if (num_tasks <= 0 || num_classes <= 0 || num_classes % num_tasks != 0) {
    throw ConfigError("split_by_class: " + std::to_string(num_classes) + " classes cannot be split into " +
                      std::to_string(num_tasks) + " equal tasks");
  }
  const int b = num_classes / num_tasks;
  std::vector<std::vector<std::size_t>> rows(static_cast<std::size_t>(num_tasks));
  for (std::size_t i = 0; i < dataset.labels.size(); ++i) {
    const int y = dataset.labels[i];
    if (y < 0 || y >= num_classes) {
      throw InputError("split_by_class: label " + std::to_string(y) + " outside [0, " +
                       std::to_string(num_classes) + ")");
    }
    rows[static_cast<std::size_t>(y / b)].push_back(i);
  }
  std::vector<Dataset> tasks;
  for (const auto& r : rows) tasks.push_back(dataset.subset(r));
  return tasks;
}

TaskStream split_by_class(const Dataset& train, const Dataset& test, int num_tasks, int num_classes) {
  if (num_classes <= 0) {
    int max_label = -1;
    for (int y : train.labels) max_label = std::max(max_label, y);
    for (int y : test.labels) max_label = std::max(max_label, y);
    num_classes = max_label + 1;
  }
  TaskStream s;
  s.train = split_by_class(train, num_tasks, num_classes);
  s.test = split_by_class(test, num_tasks, num_classes);
  s.num_classes = num_classes;
  s.classes_per_task = num_classes / num_tasks;
  return s;
}

TaskStream joint_stream(const TaskStream& stream) {
  TaskStream joint;
  joint.train.push_back(concat(stream.train));
  joint.test.push_back(concat(stream.test));
  joint.num_classes = stream.num_classes;
  joint.classes_per_task = stream.num_classes;
  return joint;
}

}  // namespace arcl
