#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>

#include "disam/datamodel.hpp"
#include "disam/image_io.hpp"
#include "test_util.hpp"

using namespace disam;
using testutil::TempDir;

namespace {

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

const char* kGoodManifest =
    "#domains: sunny,overcast\n"
    "#image_size: 8,8\n"
    "a\timg/a.ppm\t0\t0\t1 2 3 1 0 0 0\tdatabase\n"
    "b\timg/b.ppm\t1\t0\t-\tquery\n"
    "c\timg/c.ppm\t1\t1\t-\ttrain\n";

}  // namespace

TEST_CASE("manifest: well-formed input round-trips") {
  TempDir tmp("manifest");
  const std::string p = tmp.str() + "/m.tsv";
  write_file(p, kGoodManifest);

  Manifest m = load_manifest(p);
  REQUIRE(m.records.size() == 3);
  CHECK(m.domain_names == std::vector<std::string>{"sunny", "overcast"});
  CHECK(m.image_height == 8);
  CHECK(m.records[0].id == "a");
  CHECK(m.records[0].split == Split::database);
  CHECK(m.records[0].pose.has_value());
  CHECK(m.records[0].pose->position[2] == 3.0);
  CHECK(m.records[1].id == "b");
  CHECK(!m.records[1].pose.has_value());
  CHECK(m.records[2].place.index == 1);

  // write(load(path)) is stable: the normalized form is a fixed point.
  const std::string p2 = tmp.str() + "/m2.tsv";
  const std::string p3 = tmp.str() + "/m3.tsv";
  save_manifest(m, p2);
  Manifest m2 = load_manifest(p2);
  save_manifest(m2, p3);
  CHECK(testutil::slurp(p2) == testutil::slurp(p3));
}

TEST_CASE("manifest: validation errors name the line") {
  TempDir tmp("manifest_bad");
  const std::string p = tmp.str() + "/m.tsv";

  write_file(p,
             "#domains: one,two\n#image_size: 8,8\n"
             "a\tx.ppm\t2\t0\t-\tquery\n");
  CHECK_THROWS_WITH_AS(load_manifest(p), doctest::Contains("line 3"), UnknownDomain);

  write_file(p,
             "#domains: one,two\n#image_size: 8,8\n"
             "a\tx.ppm\t0\t0\t-\tquery\n"
             "a\ty.ppm\t0\t0\t-\tquery\n");
  CHECK_THROWS_AS(load_manifest(p), DuplicateId);

  write_file(p,
             "#domains: one,two\n#image_size: 8,8\n"
             "a\tx.ppm\t0\t0\t-\tdatabase\n");
  CHECK_THROWS_AS(load_manifest(p), MissingPoseForDatabase);

  write_file(p, "#domains: one,two\n#image_size: 8,8\na\tx.ppm\t0\n");
  CHECK_THROWS_WITH_AS(load_manifest(p), doctest::Contains("line 3"), MalformedRecord);

  // bad quaternion norm
  write_file(p,
             "#domains: one,two\n#image_size: 8,8\n"
             "a\tx.ppm\t0\t0\t0 0 0 2 0 0 0\tdatabase\n");
  CHECK_THROWS_AS(load_manifest(p), MalformedRecord);
}

TEST_CASE("manifest: empty file is a valid empty manifest") {
  TempDir tmp("manifest_empty");
  const std::string p = tmp.str() + "/m.tsv";
  write_file(p, "");
  Manifest m = load_manifest(p);
  CHECK(m.records.empty());
}

TEST_CASE("flip_horizontal is an involution that preserves metadata") {
  ImageSample s;
  s.id = "img0";
  s.domain = DomainId{1};
  s.place = PlaceId{4};
  s.split = Split::query;
  s.pixels = TensorF({3, 2, 2});
  // per channel: [[a,b],[c,d]]
  for (int c = 0; c < 3; ++c) {
    s.pixels.at(c, 0, 0) = 0.1f * static_cast<float>(c) + 0.0f;
    s.pixels.at(c, 0, 1) = 0.1f * static_cast<float>(c) + 0.01f;
    s.pixels.at(c, 1, 0) = 0.1f * static_cast<float>(c) + 0.02f;
    s.pixels.at(c, 1, 1) = 0.1f * static_cast<float>(c) + 0.03f;
  }

  const ImageSample f = flip_horizontal(s);
  CHECK(f.id == "img0#flip");
  CHECK(f.domain == s.domain);
  CHECK(f.place == s.place);
  CHECK(f.split == s.split);
  for (int c = 0; c < 3; ++c) {
    CHECK(f.pixels.at(c, 0, 0) == s.pixels.at(c, 0, 1));
    CHECK(f.pixels.at(c, 0, 1) == s.pixels.at(c, 0, 0));
    CHECK(f.pixels.at(c, 1, 0) == s.pixels.at(c, 1, 1));
    CHECK(f.pixels.at(c, 1, 1) == s.pixels.at(c, 1, 0));
  }

  const ImageSample ff = flip_horizontal(f);
  for (int64_t i = 0; i < s.pixels.numel(); ++i) CHECK(ff.pixels[i] == s.pixels[i]);

  // column-constant image is unchanged
  ImageSample cc = s;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 2; ++x) cc.pixels.at(c, y, x) = static_cast<float>(y);
  const ImageSample ccf = flip_horizontal(cc);
  for (int64_t i = 0; i < cc.pixels.numel(); ++i) CHECK(ccf.pixels[i] == cc.pixels[i]);
}

TEST_CASE("ppm round-trip preserves quantized pixels") {
  TempDir tmp("ppm");
  Rng rng(5);
  TensorF img({3, 6, 7});
  for (int64_t i = 0; i < img.numel(); ++i)
    img[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
  const std::string p = tmp.str() + "/x.ppm";
  write_ppm(img, p);
  const TensorF back = read_ppm(p);
  REQUIRE(back.shape() == img.shape());
  // one 8-bit step is 2/255
  for (int64_t i = 0; i < img.numel(); ++i) CHECK(std::abs(back[i] - img[i]) <= 1.01f / 255.0f);

  // a second write of the loaded image is byte-identical (8-bit fixed point)
  const std::string p2 = tmp.str() + "/y.ppm";
  write_ppm(back, p2);
  CHECK(testutil::slurp(p) == testutil::slurp(p2));
}

TEST_CASE("load_image_sample validates the manifest image size") {
  TempDir tmp("sample");
  TensorF img({3, 8, 8}, 0.25f);
  write_ppm(img, tmp.str() + "/a.ppm");
  write_file(tmp.str() + "/m.tsv",
             "#domains: one,two\n#image_size: 8,8\n"
             "a\ta.ppm\t0\t3\t-\ttrain\n");
  Manifest m = load_manifest(tmp.str() + "/m.tsv");
  const ImageSample s = load_image_sample(m, m.records[0], tmp.str());
  CHECK(s.pixels.shape() == std::vector<int>{3, 8, 8});
  CHECK(s.place.index == 3);

  write_file(tmp.str() + "/bad.tsv",
             "#domains: one,two\n#image_size: 16,16\n"
             "a\ta.ppm\t0\t3\t-\ttrain\n");
  Manifest bad = load_manifest(tmp.str() + "/bad.tsv");
  CHECK_THROWS_AS(load_image_sample(bad, bad.records[0], tmp.str()), ShapeMismatch);
}
