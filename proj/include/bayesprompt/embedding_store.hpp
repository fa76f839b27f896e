#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace bayesprompt {

/// Token sequence of one example with half-open subject/object spans.
struct ExampleTokens {
  std::vector<std::string> tokens;
  std::size_t subject_begin = 0;
  std::size_t subject_end = 0;
  std::size_t object_begin = 0;
  std::size_t object_end = 0;

  bool operator==(const ExampleTokens&) const = default;
};

/// M labeled example representations of dimension D.
///
/// Rows of `vectors` are examples; `labels[i]` indexes `relation_names`.
/// Tokens are optional and never required by the numeric pipeline.
struct EmbeddingSet {
  Eigen::MatrixXd vectors;
  std::vector<std::size_t> labels;
  std::vector<std::string> relation_names;
  std::optional<std::vector<ExampleTokens>> tokens;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(vectors.cols()); }
  std::size_t n_classes() const noexcept { return relation_names.size(); }

  /// Rows whose label equals `cls`, in ascending order.
  std::vector<std::size_t> members_of(std::size_t cls) const;

  /// Subset in the given row order; relation names are preserved.
  EmbeddingSet select(const std::vector<std::size_t>& rows) const;

  bool operator==(const EmbeddingSet& other) const;
};

/// Throws Error{LabelOutOfRange | NonFiniteValue | DimensionMismatch}.
void validate(const EmbeddingSet& set);

/// Sidecar path of a BPEM file: `<dir>/<stem>.meta.json`.
std::filesystem::path sidecar_path(const std::filesystem::path& bpem_path);

// Raw BPEM payload: "BPEM" | u32 version=1 | u64 M | u64 D | M*D f32, all LE.
// Values are stored as float32; the in-memory matrix is float64.
void write_bpem_matrix(const Eigen::MatrixXd& m, const std::filesystem::path& path);
Eigen::MatrixXd read_bpem_matrix(const std::filesystem::path& path);

EmbeddingSet load_embedding_set(const std::filesystem::path& path);
void save_embedding_set(const EmbeddingSet& set, const std::filesystem::path& path);

struct SynthConfig {
  std::size_t n_classes = 19;
  std::size_t per_class = 50;
  std::size_t dim = 16;
  double class_separation = 3.0;
  double within_class_stddev = 1.0;
  std::uint64_t seed = 0;
};

void validate(const SynthConfig& config);

/// Planted centers used by generate_synthetic_set (n_classes x dim).
Eigen::MatrixXd synthetic_centers(const SynthConfig& config);

/// Isotropic Gaussian classes around synthetic_centers(config). Rows are
/// grouped by class. Relation names follow "rel:class_<c>".
EmbeddingSet generate_synthetic_set(const SynthConfig& config);

/// Rows picked by kshot_sample, grouped by class.
std::vector<std::size_t> kshot_indices(const EmbeddingSet& set, std::size_t k, std::uint64_t seed);

/// Per class, min(k, class size) rows drawn uniformly without replacement.
EmbeddingSet kshot_sample(const EmbeddingSet& set, std::size_t k, std::uint64_t seed);

}  // namespace bayesprompt
