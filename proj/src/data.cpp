#include "fedsilo/data.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace fedsilo::data {

using fedsilo::Error;
using fedsilo::ErrorCode;
using fedsilo::require;

void ClientDataset::validate() const {
  require(features.rows() == labels.size(), ErrorCode::kInvalidArgument,
          "dataset features/labels row count mismatch");
  require(num_classes >= 2, ErrorCode::kInvalidArgument, "dataset needs >= 2 classes");
  for (int label : labels)
    require(label >= 0 && label < num_classes, ErrorCode::kValidation,
            "dataset label out of range");
}

void SkewSpec::validate() const {
  require(G.rows() == G.cols(), ErrorCode::kInvalidArgument, "skew G must be square");
  require(G.rows() == c.size(), ErrorCode::kInvalidArgument, "skew G/c dimension mismatch");
  require(label_noise >= 0.0 && label_noise < 1.0, ErrorCode::kInvalidArgument,
          "label_noise must lie in [0, 1)");
  require(std::abs(numkit::determinant(G)) > 1e-6, ErrorCode::kInvalidArgument,
          "skew G is singular or near-singular");
}

Matrix draw_class_means(Rng rng, std::size_t d, int classes, double scale) {
  require(d >= 2, ErrorCode::kInvalidArgument, "feature dim must be >= 2");
  require(classes >= 2, ErrorCode::kInvalidArgument, "need >= 2 classes");
  Matrix means(static_cast<std::size_t>(classes), d);
  for (double& v : means.data()) v = scale * rng.normal();
  return means;
}

std::pair<Matrix, std::vector<int>> sample_mixture(const Matrix& means, double sigma,
                                                   std::size_t n, Rng rng) {
  const std::size_t classes = means.rows();
  const std::size_t d = means.cols();
  Matrix features(n, d);
  std::vector<int> labels(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto cls = rng.below(classes);
    labels[i] = static_cast<int>(cls);
    const auto mean = means.row(cls);
    auto row = features.row(i);
    for (std::size_t j = 0; j < d; ++j) row[j] = mean[j] + sigma * rng.normal();
  }
  return {std::move(features), std::move(labels)};
}

std::pair<Matrix, std::vector<int>> generate_base(std::uint64_t seed, std::size_t n,
                                                  std::size_t d, int classes) {
  Rng rng(seed);
  const Matrix means = draw_class_means(rng.fork("means"), d, classes, 3.0);
  return sample_mixture(means, 1.0, n, rng.fork("samples"));
}

Matrix apply_skew(const Matrix& base, const SkewSpec& spec) {
  spec.validate();
  require(base.cols() == spec.G.cols(), ErrorCode::kInvalidArgument,
          "apply_skew: feature dim mismatch");
  Matrix out(base.rows(), base.cols());
  const std::size_t d = base.cols();
  for (std::size_t r = 0; r < base.rows(); ++r) {
    const auto x = base.row(r);
    auto y = out.row(r);
    for (std::size_t i = 0; i < d; ++i) {
      double acc = spec.c[i];
      const auto g = spec.G.row(i);
      for (std::size_t j = 0; j < d; ++j) acc += g[j] * x[j];
      y[i] = acc;
    }
  }
  numkit::ensure_finite(out.data(), "apply_skew");
  return out;
}

ClientDataset apply_skew(const ClientDataset& base, const SkewSpec& spec, std::uint64_t seed) {
  base.validate();
  ClientDataset out = base;
  out.features = apply_skew(base.features, spec);
  if (spec.label_noise > 0.0) {
    Rng rng = Rng(seed).fork("label-noise", static_cast<std::uint64_t>(base.client_id));
    for (std::size_t i = 0; i < out.labels.size(); ++i) {
      if (rng.uniform() < spec.label_noise)
        out.labels[i] = static_cast<int>(rng.below(static_cast<std::uint64_t>(base.num_classes)));
    }
  }
  return out;
}

SkewSpec draw_skew(Rng rng, std::size_t d, double eps, double shift_scale, double label_noise) {
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  for (int attempt = 0; attempt < 256; ++attempt) {
    Matrix g = Matrix::identity(d);
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t c = 0; c < d; ++c) g.at(r, c) += eps * inv_sqrt_d * rng.normal();
    if (std::abs(numkit::determinant(g)) <= 1e-6) continue;
    const double cond_estimate =
        numkit::frobenius_norm(g) * numkit::frobenius_norm(numkit::inverse(g)) /
        static_cast<double>(d);
    if (cond_estimate > 50.0) continue;
    Vector c(d, 0.0);
    for (double& v : c) v = shift_scale * rng.normal();
    SkewSpec spec{std::move(g), std::move(c), label_noise};
    spec.validate();
    return spec;
  }
  throw Error(ErrorCode::kNumeric, "draw_skew: rejection sampling failed to find a "
                                   "well-conditioned skew");
}

std::vector<RoundShard> shard_epoch(const ClientDataset& ds, int rounds, int epoch,
                                    std::uint64_t seed) {
  require(rounds >= 1, ErrorCode::kInvalidArgument, "shard_epoch: rounds must be >= 1");
  const std::size_t n = ds.size();
  require(n >= static_cast<std::size_t>(rounds), ErrorCode::kInvalidArgument,
          "shard_epoch: dataset smaller than round count");
  Rng rng = Rng(seed).fork("epoch-perm", static_cast<std::uint64_t>(ds.client_id),
                           static_cast<std::uint64_t>(epoch));
  const std::vector<std::size_t> perm = rng.permutation(n);

  const std::size_t t = static_cast<std::size_t>(rounds);
  const std::size_t base_size = n / t;
  const std::size_t remainder = n % t;
  const std::size_t d = ds.dim();

  std::vector<RoundShard> shards;
  shards.reserve(t);
  std::size_t pos = 0;
  for (std::size_t s = 0; s < t; ++s) {
    const std::size_t size = base_size + (s < remainder ? 1 : 0);
    RoundShard shard;
    shard.round_index = static_cast<int>(s) + 1;
    shard.features = Matrix(size, d);
    shard.labels.resize(size);
    for (std::size_t i = 0; i < size; ++i) {
      const std::size_t src = perm[pos + i];
      const auto from = ds.features.row(src);
      auto to = shard.features.row(i);
      std::copy(from.begin(), from.end(), to.begin());
      shard.labels[i] = ds.labels[src];
    }
    pos += size;
    shards.push_back(std::move(shard));
  }
  return shards;
}

namespace {

double parse_double_field(std::string_view field, std::size_t line_no) {
  double value = 0.0;
  const char* begin = field.data();
  const char* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc{} || ptr != end) {
    throw Error(ErrorCode::kParse,
                "line " + std::to_string(line_no) + ": not a number: '" + std::string(field) + "'");
  }
  return value;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

}  // namespace

ClientDataset load_csv(const std::string& path, std::optional<int> num_classes) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::kIo, "cannot open " + path);

  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorCode::kParse, path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> header = split_csv_line(line);
  require(header.size() >= 2 && header.back() == "label", ErrorCode::kParse,
          path + ": header must be f0,...,f{d-1},label");
  const std::size_t d = header.size() - 1;
  for (std::size_t i = 0; i < d; ++i)
    require(header[i] == "f" + std::to_string(i), ErrorCode::kParse,
            path + ": unexpected header column '" + header[i] + "'");

  std::vector<double> values;
  std::vector<int> labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> fields = split_csv_line(line);
    if (fields.size() != d + 1) {
      throw Error(ErrorCode::kParse, path + ": line " + std::to_string(line_no) + ": expected " +
                                         std::to_string(d + 1) + " fields, got " +
                                         std::to_string(fields.size()));
    }
    for (std::size_t i = 0; i < d; ++i) values.push_back(parse_double_field(fields[i], line_no));
    const double label_value = parse_double_field(fields[d], line_no);
    const int label = static_cast<int>(label_value);
    require(static_cast<double>(label) == label_value && label >= 0, ErrorCode::kParse,
            path + ": line " + std::to_string(line_no) + ": label must be a non-negative integer");
    labels.push_back(label);
  }

  const std::size_t n = labels.size();
  ClientDataset ds;
  ds.features = Matrix(n, d, std::move(values));
  ds.labels = std::move(labels);
  int max_label = 1;
  for (int label : ds.labels) max_label = std::max(max_label, label + 1);
  ds.num_classes = num_classes.value_or(max_label);
  if (num_classes.has_value()) {
    for (int label : ds.labels)
      require(label < *num_classes, ErrorCode::kValidation,
              path + ": label out of range for " + std::to_string(*num_classes) + " classes");
  }
  return ds;
}

void write_csv(const ClientDataset& ds, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), ErrorCode::kIo, "cannot write " + path);
  const std::size_t d = ds.dim();
  for (std::size_t i = 0; i < d; ++i) out << "f" << i << ",";
  out << "label\n";
  out.precision(17);
  for (std::size_t r = 0; r < ds.size(); ++r) {
    const auto row = ds.features.row(r);
    for (std::size_t i = 0; i < d; ++i) out << row[i] << ",";
    out << ds.labels[r] << "\n";
  }
  require(out.good(), ErrorCode::kIo, "write failed for " + path);
}

void write_dataset_metadata(const ClientDataset& ds, const SkewSpec& skew, std::uint64_t seed,
                            const std::string& path) {
  nlohmann::json j;
  j["client_id"] = ds.client_id;
  j["domain_tag"] = ds.domain_tag;
  j["seed"] = seed;
  j["samples"] = ds.size();
  j["dim"] = ds.dim();
  j["classes"] = ds.num_classes;
  std::vector<int> counts(static_cast<std::size_t>(ds.num_classes), 0);
  for (int label : ds.labels) counts[static_cast<std::size_t>(label)]++;
  j["class_counts"] = counts;
  j["skew"]["G"] = std::vector<double>(skew.G.data().begin(), skew.G.data().end());
  j["skew"]["c"] = skew.c;
  j["skew"]["label_noise"] = skew.label_noise;
  std::ofstream out(path);
  require(out.good(), ErrorCode::kIo, "cannot write " + path);
  out << j.dump(2) << "\n";
  require(out.good(), ErrorCode::kIo, "write failed for " + path);
}

}  // namespace fedsilo::data
