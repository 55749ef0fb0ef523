#include "pipetrain/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

namespace pipetrain {

namespace {

Dataset split_80_20(const std::vector<std::vector<double>>& xs, const std::vector<int>& ys, int classes,
                    std::uint64_t seed) {
  const std::size_t n = xs.size(), dim = xs.front().size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed ^ 0x5deece66dULL);
  std::shuffle(idx.begin(), idx.end(), rng);

  const std::size_t train_n = n * 4 / 5;
  Dataset d;
  d.num_classes = classes;
  d.train_x = Tensor({train_n, dim});
  d.test_x = Tensor({n - train_n, dim});
  for (std::size_t i = 0; i < n; ++i) {
    bool train = i < train_n;
    std::size_t row = train ? i : i - train_n;
    Tensor& dst = train ? d.train_x : d.test_x;
    for (std::size_t j = 0; j < dim; ++j) dst.at(row, j) = xs[idx[i]][j];
    (train ? d.train_y : d.test_y).push_back(ys[idx[i]]);
  }
  return d;
}

}  // namespace

Dataset generate_spiral(int classes, int samples, double noise, std::uint64_t seed) {
  if (classes < 2) throw std::invalid_argument("generate_spiral: need at least two classes");
  if (samples < classes) throw std::invalid_argument("generate_spiral: need at least one sample per class");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<std::vector<double>> xs;
  std::vector<int> ys;
  for (int k = 0; k < classes; ++k) {
    int per = samples / classes + (k < samples % classes ? 1 : 0);
    for (int i = 0; i < per; ++i) {
      double t = static_cast<double>(i) / static_cast<double>(per);
      double r = 0.2 + 0.8 * t;
      double theta = 2.0 * M_PI * static_cast<double>(k) / classes + 3.0 * M_PI * t + noise * gauss(rng);
      xs.push_back({r * std::cos(theta), r * std::sin(theta)});
      ys.push_back(k);
    }
  }
  return split_80_20(xs, ys, classes, seed);
}

Dataset generate_blobs(int classes, int samples, double noise, std::uint64_t seed) {
  if (classes < 2) throw std::invalid_argument("generate_blobs: need at least two classes");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<std::vector<double>> xs;
  std::vector<int> ys;
  for (int k = 0; k < classes; ++k) {
    int per = samples / classes + (k < samples % classes ? 1 : 0);
    double cx = 2.0 * std::cos(2.0 * M_PI * k / classes);
    double cy = 2.0 * std::sin(2.0 * M_PI * k / classes);
    for (int i = 0; i < per; ++i) {
      xs.push_back({cx + noise * gauss(rng), cy + noise * gauss(rng)});
      ys.push_back(k);
    }
  }
  return split_80_20(xs, ys, classes, seed);
}

namespace {

std::uint32_t read_be32(std::ifstream& in, const std::string& path, std::size_t& offset) {
  unsigned char buf[4];
  in.read(reinterpret_cast<char*>(buf), 4);
  if (!in)
    throw IdxError("idx: " + path + " truncated at byte " + std::to_string(offset));
  offset += 4;
  return (static_cast<std::uint32_t>(buf[0]) << 24) | (static_cast<std::uint32_t>(buf[1]) << 16) |
         (static_cast<std::uint32_t>(buf[2]) << 8) | static_cast<std::uint32_t>(buf[3]);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw IdxError("idx: cannot open " + images_path);
  std::size_t img_off = 0;
  std::uint32_t magic = read_be32(img, images_path, img_off);
  if (magic != 0x00000803u)
    throw IdxError("idx: bad image magic in " + images_path + " (got " + std::to_string(magic) + ")");
  std::uint32_t count = read_be32(img, images_path, img_off);
  std::uint32_t rows = read_be32(img, images_path, img_off);
  std::uint32_t cols = read_be32(img, images_path, img_off);

  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw IdxError("idx: cannot open " + labels_path);
  std::size_t lab_off = 0;
  std::uint32_t lab_magic = read_be32(lab, labels_path, lab_off);
  if (lab_magic != 0x00000801u)
    throw IdxError("idx: bad label magic in " + labels_path + " (got " + std::to_string(lab_magic) + ")");
  std::uint32_t lab_count = read_be32(lab, labels_path, lab_off);
  if (lab_count != count)
    throw IdxError("idx: image count " + std::to_string(count) + " != label count " +
                   std::to_string(lab_count));
  if (count == 0) throw IdxError("idx: empty dataset");

  const std::size_t dim = static_cast<std::size_t>(rows) * cols;
  std::vector<unsigned char> pixel_buf(dim);
  std::vector<std::vector<double>> xs;
  std::vector<int> ys;
  int max_label = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    img.read(reinterpret_cast<char*>(pixel_buf.data()), static_cast<std::streamsize>(dim));
    if (!img) throw IdxError("idx: " + images_path + " truncated at byte " + std::to_string(img_off));
    img_off += dim;
    char label_byte;
    lab.read(&label_byte, 1);
    if (!lab) throw IdxError("idx: " + labels_path + " truncated at byte " + std::to_string(lab_off));
    ++lab_off;
    std::vector<double> row(dim);
    for (std::size_t j = 0; j < dim; ++j) row[j] = static_cast<double>(pixel_buf[j]) / 255.0;
    xs.push_back(std::move(row));
    int y = static_cast<int>(static_cast<unsigned char>(label_byte));
    max_label = std::max(max_label, y);
    ys.push_back(y);
  }

  // external data is returned as-is; callers decide how to split
  const std::size_t n = xs.size();
  Dataset d;
  d.num_classes = max_label + 1;
  d.train_x = Tensor({n, dim});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < dim; ++j) d.train_x.at(i, j) = xs[i][j];
    d.train_y.push_back(ys[i]);
  }
  return d;
}

}  // namespace pipetrain
