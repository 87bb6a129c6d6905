#pragma once

#include <functional>
#include <string>
#include <vector>

#include "disam/datamodel.hpp"
#include "disam/network.hpp"

namespace disam {
namespace retrieval {

struct DbEntry {
  std::string id;
  FeatureMap feature;
  Pose pose;
};

// Ordered collection of pre-encoded database features. Immutable after
// build; concurrent queries are safe.
struct FeatureDatabase {
  std::vector<DbEntry> entries;
  std::string fingerprint;  // fingerprint of the producing model bundle
  int channels = 0;
  int height = 0;
  int width = 0;

  bool empty() const { return entries.empty(); }
  size_t size() const { return entries.size(); }
};

enum class RetrievalStage { coarse, fine, coarse_to_fine };

struct RankedMatch {
  std::string db_id;
  double score = 0;
  size_t db_index = 0;
};

struct RetrievalResult {
  std::string query_id;
  std::vector<RankedMatch> ranked;  // scores nonincreasing, ids distinct
  RetrievalStage stage = RetrievalStage::coarse;
  Pose predicted_pose;  // pose of the rank-1 entry
};

// Encodes every database-split record with the given domain's encoder,
// preserving manifest order.
FeatureDatabase build_feature_db(const net::ModelBundle& bundle, const Manifest& manifest,
                                 const std::string& manifest_dir, DomainId domain);

// Binary format: magic "DISAMFDB", version, fingerprint, count, (n,h,w),
// then per entry id, pose (7 little-endian doubles) and float32 feature.
void save_feature_db(const FeatureDatabase& db, const std::string& path);
FeatureDatabase load_feature_db(const std::string& path);

// Flattened-vector cosine similarity used by the fine stage.
double flattened_cosine(const FeatureMap& a, const FeatureMap& b);
double flattened_cosine(const TensorD& a, const TensorD& b);

// Ranks all entries by mean channel cosine, descending; equal scores break
// toward the lower database index.
RetrievalResult coarse_retrieve(const FeatureDatabase& db, const FeatureMap& query, int top_n,
                                const std::string& query_id = "");

// Same contract with the flattened-cosine metric (fine-only retrieval over
// a database built with the fine model).
RetrievalResult fine_retrieve(const FeatureDatabase& db, const FeatureMap& query, int top_n,
                              const std::string& query_id = "");

// Supplies fine-model features for database entries: either re-encodes raw
// images or serves a pre-built cache; both must rank identically.
using FineFeatureSource = std::function<FeatureMap(size_t db_index)>;

FineFeatureSource reencode_source(const net::ModelBundle& fine_bundle, const Manifest& manifest,
                                  const std::string& manifest_dir, const FeatureDatabase& coarse_db,
                                  DomainId db_domain);
FineFeatureSource cached_source(const FeatureDatabase& fine_db);

struct CoarseToFineOptions {
  int top_n = 3;
  bool strict_fingerprint = false;  // throw instead of warn on mismatch
};

// Stage 1: coarse top-N shortlist; stage 2: re-rank the shortlist by
// flattened cosine of fine-model features. The final prediction is always a
// member of the stage-1 candidate set.
RetrievalResult coarse_to_fine(const FeatureDatabase& coarse_db,
                               const net::ModelBundle& fine_bundle,
                               const net::ModelBundle& coarse_bundle, const TensorF& query_pixels,
                               DomainId query_domain, const FineFeatureSource& fine_features,
                               const CoarseToFineOptions& opts,
                               const std::string& query_id = "");

}  // namespace retrieval
}  // namespace disam
