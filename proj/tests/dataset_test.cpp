#include "pipetrain/dataset.hpp"

#include <cstdio>
#include <fstream>

#include "doctest.h"

using namespace pipetrain;

namespace {

void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void push_be32(std::vector<unsigned char>& v, std::uint32_t x) {
  v.push_back(static_cast<unsigned char>(x >> 24));
  v.push_back(static_cast<unsigned char>(x >> 16));
  v.push_back(static_cast<unsigned char>(x >> 8));
  v.push_back(static_cast<unsigned char>(x));
}

struct IdxFixture {
  std::string images = "idx_test_images.bin";
  std::string labels = "idx_test_labels.bin";

  IdxFixture(std::uint32_t count = 2, bool truncate_images = false, std::uint32_t label_count = 0) {
    std::vector<unsigned char> img;
    push_be32(img, 0x00000803u);
    push_be32(img, count);
    push_be32(img, 2);  // rows
    push_be32(img, 3);  // cols
    std::size_t pixels = static_cast<std::size_t>(count) * 6;
    if (truncate_images && pixels > 4) pixels -= 4;
    for (std::size_t i = 0; i < pixels; ++i) img.push_back(static_cast<unsigned char>(i * 17 % 256));
    write_bytes(images, img);

    std::vector<unsigned char> lab;
    push_be32(lab, 0x00000801u);
    push_be32(lab, label_count ? label_count : count);
    for (std::uint32_t i = 0; i < (label_count ? label_count : count); ++i)
      lab.push_back(static_cast<unsigned char>(i % 3));
    write_bytes(labels, lab);
  }
  ~IdxFixture() {
    std::remove(images.c_str());
    std::remove(labels.c_str());
  }
};

}  // namespace

TEST_CASE("spiral generation") {
  SUBCASE("identical seeds produce identical datasets") {
    Dataset a = generate_spiral(3, 300, 0.2, 42);
    Dataset b = generate_spiral(3, 300, 0.2, 42);
    CHECK(a.train_x.data == b.train_x.data);
    CHECK(a.test_x.data == b.test_x.data);
    CHECK(a.train_y == b.train_y);
    Dataset c = generate_spiral(3, 300, 0.2, 43);
    CHECK(a.train_x.data != c.train_x.data);
  }
  SUBCASE("3000 samples split 2400/600") {
    Dataset d = generate_spiral(3, 3000, 0.2, 1);
    CHECK(d.train_x.rows() == 2400);
    CHECK(d.test_x.rows() == 600);
    CHECK(d.train_y.size() == 2400);
    CHECK(d.test_y.size() == 600);
    CHECK(d.feature_dim() == 2);
  }
  SUBCASE("at least two classes required") {
    CHECK_THROWS_AS(generate_spiral(1, 100, 0.1, 1), std::invalid_argument);
  }
}

TEST_CASE("blobs are linearly separable for small noise") {
  Dataset d = generate_blobs(2, 500, 0.2, 7);
  CHECK(d.num_classes == 2);
  CHECK(d.train_x.rows() == 400);
}

TEST_CASE("idx loader") {
  SUBCASE("two-image fixture parses to shape (2, rows*cols)") {
    IdxFixture f;
    Dataset d = load_idx(f.images, f.labels);
    CHECK(d.train_x.rows() == 2);
    CHECK(d.train_x.cols() == 6);
    CHECK(d.train_y == std::vector<int>{0, 1});
    // values scaled into [0,1]
    for (double v : d.train_x.data) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    CHECK(d.train_x.at(0, 1) == doctest::Approx(17.0 / 255.0));
  }
  SUBCASE("truncated image file reports the byte offset") {
    IdxFixture f(2, /*truncate_images=*/true);
    try {
      load_idx(f.images, f.labels);
      FAIL("expected IdxError");
    } catch (const IdxError& e) {
      std::string msg = e.what();
      CHECK(msg.find("truncated at byte") != std::string::npos);
    }
  }
  SUBCASE("label/image count mismatch rejected") {
    IdxFixture f(2, false, /*label_count=*/3);
    CHECK_THROWS_AS(load_idx(f.images, f.labels), IdxError);
  }
  SUBCASE("bad magic rejected") {
    IdxFixture f;
    std::vector<unsigned char> junk;
    push_be32(junk, 0x00000807u);
    push_be32(junk, 1);
    push_be32(junk, 1);
    push_be32(junk, 1);
    junk.push_back(0);
    write_bytes(f.images, junk);
    CHECK_THROWS_AS(load_idx(f.images, f.labels), IdxError);
  }
}
