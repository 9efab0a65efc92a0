#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fedsilo/numkit.hpp"

namespace fedsilo::data {

using numkit::Matrix;
using numkit::Rng;
using numkit::Vector;

struct ClientDataset {
  int client_id = 0;
  Matrix features;          // n x d
  std::vector<int> labels;  // n entries in [0, num_classes)
  std::string domain_tag;
  int num_classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols(); }
  void validate() const;
};

/// Ground-truth affine skew applied to a client's base data: x -> G x + c.
struct SkewSpec {
  Matrix G;
  Vector c;
  double label_noise = 0.0;

  void validate() const;  // requires |det G| > 1e-6 and label_noise in [0, 1)
};

struct RoundShard {
  int round_index = 0;
  Matrix features;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

/// A held-out evaluation split. When `client_id` is set, the split belongs to
/// that client's domain and client-adaptive models evaluate it through the
/// client's transform.
struct EvalSplit {
  std::string name;
  Matrix features;
  std::vector<int> labels;
  std::optional<int> client_id;
};

/// Class means for a spherical Gaussian mixture, one row per class.
Matrix draw_class_means(Rng rng, std::size_t d, int classes, double scale);

std::pair<Matrix, std::vector<int>> sample_mixture(const Matrix& means, double sigma,
                                                   std::size_t n, Rng rng);

/// Convenience generator: means and samples both derived from `seed`.
std::pair<Matrix, std::vector<int>> generate_base(std::uint64_t seed, std::size_t n,
                                                  std::size_t d, int classes);

/// Row-wise x -> G x + c over the whole feature matrix.
Matrix apply_skew(const Matrix& base, const SkewSpec& spec);

/// Feature skew plus label noise: a `label_noise` fraction of labels is
/// resampled uniformly from the stream forked off `seed`.
ClientDataset apply_skew(const ClientDataset& base, const SkewSpec& spec, std::uint64_t seed);

/// Random skew G = I + eps * R with |det G| > 1e-6 and a bounded conditioning
/// estimate; rejection-sampled so an affine canonicalizer always exists.
SkewSpec draw_skew(Rng rng, std::size_t d, double eps, double shift_scale, double label_noise);

/// Partition one epoch of a client's data into T disjoint shards under a fresh
/// per-(client, epoch) permutation. The first (n mod T) shards take one extra
/// sample; the union is the whole dataset.
std::vector<RoundShard> shard_epoch(const ClientDataset& ds, int rounds, int epoch,
                                    std::uint64_t seed);

/// CSV with header f0,...,f{d-1},label. Parse errors carry the line number.
ClientDataset load_csv(const std::string& path, std::optional<int> num_classes = std::nullopt);
void write_csv(const ClientDataset& ds, const std::string& path);

/// Sidecar JSON next to a generated CSV: seed, skew, and counts.
void write_dataset_metadata(const ClientDataset& ds, const SkewSpec& skew, std::uint64_t seed,
                            const std::string& path);

}  // namespace fedsilo::data
