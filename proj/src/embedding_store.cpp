#include "bayesprompt/embedding_store.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "bayesprompt/error.hpp"
#include "bayesprompt/seed.hpp"

namespace bayesprompt {

namespace {

constexpr std::array<char, 4> kMagic{'B', 'P', 'E', 'M'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 4 + 4 + 8 + 8;

template <typename T>
void put_le(std::vector<char>& out, T value) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  auto bits = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
}

template <typename T>
T get_le(const char* p) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bits |= static_cast<U>(static_cast<unsigned char>(p[i])) << (8 * i);
  }
  return std::bit_cast<T>(bits);
}

void require_finite(const Eigen::MatrixXd& m, const std::string& what) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (!std::isfinite(m(r, c))) {
        throw Error(ErrorCode::NonFiniteValue,
                    what + " row " + std::to_string(r) + " col " + std::to_string(c));
      }
    }
  }
}

nlohmann::json tokens_to_json(const std::vector<ExampleTokens>& tokens) {
  auto arr = nlohmann::json::array();
  for (const auto& t : tokens) {
    arr.push_back({{"tokens", t.tokens},
                   {"subject", {t.subject_begin, t.subject_end}},
                   {"object", {t.object_begin, t.object_end}}});
  }
  return arr;
}

std::vector<ExampleTokens> tokens_from_json(const nlohmann::json& arr) {
  std::vector<ExampleTokens> out;
  out.reserve(arr.size());
  for (const auto& j : arr) {
    ExampleTokens t;
    t.tokens = j.at("tokens").get<std::vector<std::string>>();
    t.subject_begin = j.at("subject").at(0).get<std::size_t>();
    t.subject_end = j.at("subject").at(1).get<std::size_t>();
    t.object_begin = j.at("object").at(0).get<std::size_t>();
    t.object_end = j.at("object").at(1).get<std::size_t>();
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace

std::vector<std::size_t> EmbeddingSet::members_of(std::size_t cls) const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == cls) rows.push_back(i);
  }
  return rows;
}

EmbeddingSet EmbeddingSet::select(const std::vector<std::size_t>& rows) const {
  EmbeddingSet out;
  out.vectors.resize(static_cast<Eigen::Index>(rows.size()), vectors.cols());
  out.labels.reserve(rows.size());
  out.relation_names = relation_names;
  if (tokens) out.tokens.emplace();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.vectors.row(static_cast<Eigen::Index>(i)) = vectors.row(static_cast<Eigen::Index>(rows[i]));
    out.labels.push_back(labels[rows[i]]);
    if (tokens) out.tokens->push_back((*tokens)[rows[i]]);
  }
  return out;
}

bool EmbeddingSet::operator==(const EmbeddingSet& other) const {
  if (vectors.rows() != other.vectors.rows() || vectors.cols() != other.vectors.cols()) return false;
  if (labels != other.labels || relation_names != other.relation_names || tokens != other.tokens) {
    return false;
  }
  return std::memcmp(vectors.data(), other.vectors.data(),
                     sizeof(double) * static_cast<std::size_t>(vectors.size())) == 0;
}

void validate(const EmbeddingSet& set) {
  if (static_cast<std::size_t>(set.vectors.rows()) != set.labels.size()) {
    throw Error(ErrorCode::DimensionMismatch, "label count " + std::to_string(set.labels.size()) +
                                                  " != row count " + std::to_string(set.vectors.rows()));
  }
  for (std::size_t i = 0; i < set.labels.size(); ++i) {
    if (set.labels[i] >= set.relation_names.size()) {
      throw Error(ErrorCode::LabelOutOfRange,
                  "row " + std::to_string(i) + " has label " + std::to_string(set.labels[i]) + " but only " +
                      std::to_string(set.relation_names.size()) + " relation names");
    }
  }
  if (set.tokens && set.tokens->size() != set.labels.size()) {
    throw Error(ErrorCode::DimensionMismatch, "token record count differs from row count");
  }
  require_finite(set.vectors, "embedding");
}

std::filesystem::path sidecar_path(const std::filesystem::path& bpem_path) {
  auto p = bpem_path;
  return p.replace_filename(bpem_path.stem().string() + ".meta.json");
}

void write_bpem_matrix(const Eigen::MatrixXd& m, const std::filesystem::path& path) {
  require_finite(m, "payload");
  std::vector<char> buf;
  buf.reserve(kHeaderBytes + 4 * static_cast<std::size_t>(m.size()));
  buf.insert(buf.end(), kMagic.begin(), kMagic.end());
  put_le<std::uint32_t>(buf, kVersion);
  put_le<std::uint64_t>(buf, static_cast<std::uint64_t>(m.rows()));
  put_le<std::uint64_t>(buf, static_cast<std::uint64_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      put_le<float>(buf, static_cast<float>(m(r, c)));
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw Error(ErrorCode::IoFailure, "write failed: " + path.string());
}

Eigen::MatrixXd read_bpem_matrix(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 4 || !std::equal(kMagic.begin(), kMagic.end(), buf.begin())) {
    throw Error(ErrorCode::MagicMismatch, path.string() + " is not a BPEM file");
  }
  if (buf.size() < kHeaderBytes) throw Error(ErrorCode::TruncatedPayload, "header of " + path.string());
  if (get_le<std::uint32_t>(buf.data() + 4) != kVersion) {
    throw Error(ErrorCode::MagicMismatch, "unsupported BPEM version in " + path.string());
  }
  const auto rows = get_le<std::uint64_t>(buf.data() + 8);
  const auto cols = get_le<std::uint64_t>(buf.data() + 16);
  const std::uint64_t payload = buf.size() - kHeaderBytes;
  if (cols != 0 && rows > payload / 4 / cols) {
    throw Error(ErrorCode::TruncatedPayload, path.string() + " declares " + std::to_string(rows) + "x" +
                                                 std::to_string(cols) + " but holds " + std::to_string(payload) +
                                                 " payload bytes");
  }
  if (rows * cols * 4 != payload) {
    throw Error(ErrorCode::TruncatedPayload, path.string() + ": payload length does not match header");
  }
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  const char* p = buf.data() + kHeaderBytes;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c, p += 4) {
      m(r, c) = static_cast<double>(get_le<float>(p));
    }
  }
  require_finite(m, path.string());
  return m;
}

EmbeddingSet load_embedding_set(const std::filesystem::path& path) {
  EmbeddingSet set;
  set.vectors = read_bpem_matrix(path);
  const auto meta_path = sidecar_path(path);
  std::ifstream in(meta_path);
  if (!in) throw Error(ErrorCode::IoFailure, "missing sidecar " + meta_path.string());
  try {
    const auto meta = nlohmann::json::parse(in);
    for (const auto& l : meta.at("labels")) {
      const auto v = l.get<long long>();
      if (v < 0) throw Error(ErrorCode::LabelOutOfRange, "negative label in " + meta_path.string());
      set.labels.push_back(static_cast<std::size_t>(v));
    }
    set.relation_names = meta.at("relation_names").get<std::vector<std::string>>();
    if (meta.contains("tokens") && !meta.at("tokens").is_null()) {
      set.tokens = tokens_from_json(meta.at("tokens"));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::IoFailure, "malformed sidecar " + meta_path.string() + ": " + e.what());
  }
  validate(set);
  return set;
}

void save_embedding_set(const EmbeddingSet& set, const std::filesystem::path& path) {
  validate(set);
  nlohmann::json meta{{"labels", set.labels}, {"relation_names", set.relation_names}};
  if (set.tokens) meta["tokens"] = tokens_to_json(*set.tokens);
  write_bpem_matrix(set.vectors, path);
  std::ofstream out(sidecar_path(path), std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write sidecar for " + path.string());
  out << meta.dump() << '\n';
  if (!out) throw Error(ErrorCode::IoFailure, "sidecar write failed for " + path.string());
}

void validate(const SynthConfig& config) {
  if (config.n_classes < 2) throw Error(ErrorCode::InvalidConfig, "n_classes must be >= 2");
  if (config.per_class < 1) throw Error(ErrorCode::InvalidConfig, "per_class must be >= 1");
  if (config.dim < 1) throw Error(ErrorCode::InvalidConfig, "dim must be >= 1");
  if (!(config.class_separation >= 0.0) || !std::isfinite(config.class_separation)) {
    throw Error(ErrorCode::InvalidConfig, "class_separation must be finite and >= 0");
  }
  if (!(config.within_class_stddev > 0.0) || !std::isfinite(config.within_class_stddev)) {
    throw Error(ErrorCode::InvalidConfig, "within_class_stddev must be finite and > 0");
  }
}

Eigen::MatrixXd synthetic_centers(const SynthConfig& config) {
  validate(config);
  const auto n = static_cast<Eigen::Index>(config.n_classes);
  const auto d = static_cast<Eigen::Index>(config.dim);
  // Axis slots: +e_0..+e_{D-1}, -e_0..-e_{D-1}, then 2x, 3x... further out.
  // Slots are at least `spacing` apart and each jitter has norm <= 0.1*sep,
  // so every pair of centers stays >= sep apart.
  const double jitter_radius = 0.1 * config.class_separation;
  const double spacing = config.class_separation + 2.0 * jitter_radius;
  auto rng = make_rng(config.seed, "synth-centers");
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unit;
  Eigen::MatrixXd centers = Eigen::MatrixXd::Zero(n, d);
  for (Eigen::Index c = 0; c < n; ++c) {
    const Eigen::Index axis = c % d;
    const double sign = ((c / d) % 2 == 0) ? 1.0 : -1.0;
    const double ring = static_cast<double>(c / (2 * d) + 1);
    centers(c, axis) = sign * ring * spacing;

    Eigen::VectorXd dir(d);
    for (Eigen::Index j = 0; j < d; ++j) dir(j) = normal(rng);
    const double norm = dir.norm();
    const double radius = jitter_radius * std::pow(unit(rng), 1.0 / static_cast<double>(d));
    if (norm > 0.0) centers.row(c) += (radius / norm) * dir.transpose();
  }
  return centers;
}

EmbeddingSet generate_synthetic_set(const SynthConfig& config) {
  const Eigen::MatrixXd centers = synthetic_centers(config);
  const auto d = static_cast<Eigen::Index>(config.dim);
  auto rng = make_rng(config.seed, "synth-samples");
  std::normal_distribution<double> normal(0.0, config.within_class_stddev);

  EmbeddingSet set;
  set.vectors.resize(static_cast<Eigen::Index>(config.n_classes * config.per_class), d);
  set.labels.reserve(config.n_classes * config.per_class);
  for (std::size_t c = 0; c < config.n_classes; ++c) {
    set.relation_names.push_back("rel:class_" + std::to_string(c));
  }
  Eigen::Index row = 0;
  for (std::size_t c = 0; c < config.n_classes; ++c) {
    for (std::size_t i = 0; i < config.per_class; ++i, ++row) {
      for (Eigen::Index j = 0; j < d; ++j) {
        // Values are kept float32-representable so files round-trip exactly.
        const double v = centers(static_cast<Eigen::Index>(c), j) + normal(rng);
        set.vectors(row, j) = static_cast<double>(static_cast<float>(v));
      }
      set.labels.push_back(c);
    }
  }
  return set;
}

std::vector<std::size_t> kshot_indices(const EmbeddingSet& set, std::size_t k, std::uint64_t seed) {
  auto rng = make_rng(seed, "kshot");
  std::vector<std::size_t> rows;
  for (std::size_t c = 0; c < set.n_classes(); ++c) {
    auto members = set.members_of(c);
    // Partial Fisher-Yates: the first min(k, n) slots are a uniform draw.
    const std::size_t take = std::min(k, members.size());
    for (std::size_t i = 0; i < take; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, members.size() - 1);
      std::swap(members[i], members[pick(rng)]);
    }
    rows.insert(rows.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take));
  }
  return rows;
}

EmbeddingSet kshot_sample(const EmbeddingSet& set, std::size_t k, std::uint64_t seed) {
  return set.select(kshot_indices(set, k, seed));
}

}  // namespace bayesprompt
