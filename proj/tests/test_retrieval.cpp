#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>

#include "disam/image_io.hpp"
#include "disam/retrieval.hpp"
#include "disam/samcore.hpp"
#include "test_util.hpp"

using namespace disam;
using namespace disam::retrieval;
using testutil::random_tensor_f;
using testutil::TempDir;

namespace {

net::NetworkConfig toy_config(uint64_t seed) {
  net::NetworkConfig c;
  c.image_size = 16;
  c.base_channels = 4;
  c.latent_channels = 8;
  c.n_res_blocks_total = 2;
  c.n_domains = 2;
  c.disc_layers = 2;
  c.seed = seed;
  return c;
}

FeatureDatabase random_db(Rng& rng, size_t n, std::vector<int> shape) {
  FeatureDatabase db;
  db.fingerprint = "test";
  db.channels = shape[0];
  db.height = shape[1];
  db.width = shape[2];
  for (size_t i = 0; i < n; ++i) {
    Pose pose;
    pose.position[0] = static_cast<double>(i);
    db.entries.push_back({"e" + std::to_string(i), random_tensor_f(rng, shape), pose});
  }
  return db;
}

// Exhaustive scalar reference ranking: recompute both metrics with plain
// loops and sort with the documented tie-break.
std::vector<size_t> oracle_ranking(const FeatureDatabase& db, const FeatureMap& q, bool flattened) {
  std::vector<std::pair<double, size_t>> scored;
  for (size_t i = 0; i < db.size(); ++i) {
    const FeatureMap& e = db.entries[i].feature;
    double score = 0;
    if (flattened) {
      double dot = 0, nq = 0, ne = 0;
      for (int64_t j = 0; j < q.numel(); ++j) {
        dot += double(q[j]) * double(e[j]);
        nq += double(q[j]) * double(q[j]);
        ne += double(e[j]) * double(e[j]);
      }
      score = dot / (std::sqrt(nq) * std::sqrt(ne) + 1e-8);
    } else {
      const int n = q.dim(0), hw = q.dim(1) * q.dim(2);
      for (int k = 0; k < n; ++k) {
        double dot = 0, nq = 0, ne = 0;
        for (int j = 0; j < hw; ++j) {
          const double qv = q[k * hw + j], ev = e[k * hw + j];
          dot += qv * ev;
          nq += qv * qv;
          ne += ev * ev;
        }
        score += dot / (std::sqrt(nq) * std::sqrt(ne) + 1e-8);
      }
      score /= n;
    }
    scored.emplace_back(score, i);
  }
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<size_t> order;
  for (auto& [s, i] : scored) order.push_back(i);
  return order;
}

}  // namespace

TEST_CASE("flattened cosine: identity, orthogonality, scalar oracle") {
  Rng rng(1);
  FeatureMap a = random_tensor_f(rng, {3, 4, 4});
  CHECK(flattened_cosine(a, a) == doctest::Approx(1.0).epsilon(1e-6));

  FeatureMap u({1, 1, 2}), v({1, 1, 2});
  u[0] = 1;
  v[1] = 1;
  CHECK(std::abs(flattened_cosine(u, v)) <= 1e-9);

  FeatureMap b = random_tensor_f(rng, {3, 4, 4});
  double dot = 0, na = 0, nb = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    dot += double(a[i]) * double(b[i]);
    na += double(a[i]) * double(a[i]);
    nb += double(b[i]) * double(b[i]);
  }
  CHECK(std::abs(flattened_cosine(a, b) - dot / (std::sqrt(na) * std::sqrt(nb) + 1e-8)) <= 1e-9);
}

TEST_CASE("coarse retrieve: self match, clamping, empty db") {
  Rng rng(2);
  FeatureDatabase db = random_db(rng, 8, {4, 3, 3});

  const RetrievalResult r = coarse_retrieve(db, db.entries[5].feature, 3, "q");
  CHECK(r.ranked.front().db_id == "e5");
  CHECK(r.ranked.front().score == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(r.predicted_pose.position[0] == 5.0);
  CHECK(r.ranked.size() == 3);

  const RetrievalResult all = coarse_retrieve(db, db.entries[0].feature, 100, "q");
  CHECK(all.ranked.size() == db.size());

  FeatureDatabase empty;
  CHECK_THROWS_AS(coarse_retrieve(empty, db.entries[0].feature, 1, "q"), EmptyDatabase);
}

TEST_CASE("rankings match the exhaustive scalar oracle, including ties") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const size_t n = 5 + static_cast<size_t>(rng.uniform_int(45));
    FeatureDatabase db = random_db(rng, n, {3, 3, 3});
    // Inject exact duplicates so tie-breaks are exercised.
    if (n > 4) {
      db.entries[3].feature = db.entries[1].feature;
      db.entries[4].feature = db.entries[1].feature;
    }
    const FeatureMap q = random_tensor_f(rng, {3, 3, 3});

    const auto coarse = coarse_retrieve(db, q, static_cast<int>(n), "q");
    const auto want_coarse = oracle_ranking(db, q, false);
    REQUIRE(coarse.ranked.size() == want_coarse.size());
    for (size_t i = 0; i < want_coarse.size(); ++i)
      CHECK(coarse.ranked[i].db_index == want_coarse[i]);

    const auto fine = fine_retrieve(db, q, static_cast<int>(n), "q");
    const auto want_fine = oracle_ranking(db, q, true);
    for (size_t i = 0; i < want_fine.size(); ++i) CHECK(fine.ranked[i].db_index == want_fine[i]);
  }
}

TEST_CASE("coarse ranking is invariant to positive scaling of the query") {
  Rng rng(4);
  FeatureDatabase db = random_db(rng, 20, {4, 3, 3});
  FeatureMap q = random_tensor_f(rng, {4, 3, 3});
  const auto base = coarse_retrieve(db, q, 20, "q");
  for (float c : {0.25f, 4.0f, 173.0f}) {
    FeatureMap scaled = q;
    for (int64_t i = 0; i < scaled.numel(); ++i) scaled[i] *= c;
    const auto got = coarse_retrieve(db, scaled, 20, "q");
    for (size_t i = 0; i < base.ranked.size(); ++i)
      CHECK(got.ranked[i].db_index == base.ranked[i].db_index);
  }
}

TEST_CASE("feature db file round-trip is bit-exact") {
  TempDir tmp("fdb");
  Rng rng(5);
  FeatureDatabase db = random_db(rng, 6, {4, 3, 3});
  db.fingerprint = "cafebabe";
  const std::string path = tmp.str() + "/f.db";
  save_feature_db(db, path);
  const FeatureDatabase back = load_feature_db(path);
  CHECK(back.fingerprint == "cafebabe");
  REQUIRE(back.size() == db.size());
  for (size_t i = 0; i < db.size(); ++i) {
    CHECK(back.entries[i].id == db.entries[i].id);
    CHECK(back.entries[i].pose == db.entries[i].pose);
    for (int64_t j = 0; j < db.entries[i].feature.numel(); ++j)
      CHECK(back.entries[i].feature[j] == db.entries[i].feature[j]);
  }

  // corrupt the payload -> checksum failure
  std::string bytes = testutil::slurp(path);
  bytes[bytes.size() / 2] ^= 0x20;
  std::ofstream(tmp.str() + "/bad.db", std::ios::binary).write(bytes.data(), (std::streamsize)bytes.size());
  CHECK_THROWS_AS(load_feature_db(tmp.str() + "/bad.db"), IoError);
}

TEST_CASE("build_feature_db preserves manifest order and validates poses") {
  TempDir tmp("builddb");
  const net::NetworkConfig cfg = toy_config(11);
  const net::ModelBundle bundle = net::init_bundle(cfg);
  Rng rng(6);

  std::ofstream m(tmp.str() + "/m.tsv");
  m << "#domains: a,b\n#image_size: 16,16\n";
  for (int i = 0; i < 5; ++i) {
    const std::string name = "img" + std::to_string(i) + ".ppm";
    write_ppm(random_tensor_f(rng, {3, 16, 16}), tmp.str() + "/" + name);
    m << "db" << i << "\t" << name << "\t0\t" << i << "\t" << i << " 0 0 1 0 0 0\tdatabase\n";
  }
  m.close();

  const Manifest manifest = load_manifest(tmp.str() + "/m.tsv");
  const FeatureDatabase db = build_feature_db(bundle, manifest, tmp.str(), DomainId{0});
  REQUIRE(db.size() == 5);
  CHECK(db.fingerprint == bundle.fingerprint);
  for (size_t i = 0; i < 5; ++i) {
    CHECK(db.entries[i].id == "db" + std::to_string(i));
    CHECK(db.entries[i].pose.position[0] == static_cast<double>(i));
  }
  CHECK(db.channels == 8);
  CHECK(db.height == 4);
}

TEST_CASE("coarse-to-fine: containment and degenerate equivalences") {
  TempDir tmp("c2f");
  const net::ModelBundle coarse_bundle = net::init_bundle(toy_config(21));
  const net::ModelBundle fine_bundle = net::init_bundle(toy_config(22));
  Rng rng(7);

  // database images + manifest
  const size_t n_db = 12;
  std::ofstream m(tmp.str() + "/m.tsv");
  m << "#domains: a,b\n#image_size: 16,16\n";
  std::vector<TensorF> db_images;
  for (size_t i = 0; i < n_db; ++i) {
    const std::string name = "db" + std::to_string(i) + ".ppm";
    db_images.push_back(random_tensor_f(rng, {3, 16, 16}));
    write_ppm(db_images.back(), tmp.str() + "/" + name);
    m << "db" << i << "\t" << name << "\t0\t" << i << "\t" << i << " 0 0 1 0 0 0\tdatabase\n";
  }
  m.close();
  const Manifest manifest = load_manifest(tmp.str() + "/m.tsv");

  const FeatureDatabase coarse_db = build_feature_db(coarse_bundle, manifest, tmp.str(), DomainId{0});
  const FeatureDatabase fine_db = build_feature_db(fine_bundle, manifest, tmp.str(), DomainId{0});

  const auto reenc = reencode_source(fine_bundle, manifest, tmp.str(), coarse_db, DomainId{0});
  const auto cached = cached_source(fine_db);

  for (int trial = 0; trial < 12; ++trial) {
    const TensorF q = random_tensor_f(rng, {3, 16, 16});

    CoarseToFineOptions o3;
    o3.top_n = 3;
    const auto r3 = coarse_to_fine(coarse_db, fine_bundle, coarse_bundle, q, DomainId{1}, reenc, o3, "q");
    CHECK(r3.ranked.size() == 3);
    // containment: every final candidate came from the coarse top-3
    const FeatureMap qc = net::encode_pixels(coarse_bundle, DomainId{1}, q);
    const auto shortlist = coarse_retrieve(coarse_db, qc, 3, "q");
    for (const auto& rm : r3.ranked) {
      bool found = false;
      for (const auto& sm : shortlist.ranked) found |= sm.db_index == rm.db_index;
      CHECK(found);
    }

    // N = |db|: identical to fine-only retrieval over the whole database
    CoarseToFineOptions oall;
    oall.top_n = static_cast<int>(n_db);
    const auto rall = coarse_to_fine(coarse_db, fine_bundle, coarse_bundle, q, DomainId{1}, reenc, oall, "q");
    const FeatureMap qf = net::encode_pixels(fine_bundle, DomainId{1}, q);
    const auto fine_only = fine_retrieve(fine_db, qf, static_cast<int>(n_db), "q");
    REQUIRE(rall.ranked.size() == fine_only.ranked.size());
    for (size_t i = 0; i < rall.ranked.size(); ++i)
      CHECK(rall.ranked[i].db_index == fine_only.ranked[i].db_index);

    // N = 1: the coarse rank-1 wins regardless of fine scores
    CoarseToFineOptions o1;
    o1.top_n = 1;
    const auto r1 = coarse_to_fine(coarse_db, fine_bundle, coarse_bundle, q, DomainId{1}, reenc, o1, "q");
    CHECK(r1.ranked.size() == 1);
    CHECK(r1.ranked[0].db_index == shortlist.ranked[0].db_index);

    // cache and re-encode sources are interchangeable
    const auto rc = coarse_to_fine(coarse_db, fine_bundle, coarse_bundle, q, DomainId{1}, cached, o3, "q");
    for (size_t i = 0; i < r3.ranked.size(); ++i) {
      CHECK(rc.ranked[i].db_index == r3.ranked[i].db_index);
      CHECK(rc.ranked[i].score == r3.ranked[i].score);
    }
  }
}

TEST_CASE("fingerprint mismatch: strict mode throws") {
  TempDir tmp("fp");
  const net::ModelBundle coarse_bundle = net::init_bundle(toy_config(31));
  const net::ModelBundle fine_bundle = net::init_bundle(toy_config(32));
  Rng rng(8);
  FeatureDatabase db = random_db(rng, 4, {8, 4, 4});
  db.fingerprint = "deadbeef";  // certainly not the bundle's

  CoarseToFineOptions strict;
  strict.top_n = 2;
  strict.strict_fingerprint = true;
  const TensorF q = random_tensor_f(rng, {3, 16, 16});
  CHECK_THROWS_AS(
      coarse_to_fine(db, fine_bundle, coarse_bundle, q, DomainId{0}, cached_source(db), strict, "q"),
      FingerprintMismatch);
}
