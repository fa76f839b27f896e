#include "bayesprompt/prompt_synthesis.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <unordered_map>

#include "bayesprompt/error.hpp"
#include "json_io.hpp"

namespace bayesprompt {

namespace {

std::string lowercase(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string> split_all(const std::vector<std::string>& parts, char sep) {
  std::vector<std::string> out;
  for (const auto& part : parts) {
    std::size_t start = 0;
    while (true) {
      const auto pos = part.find(sep, start);
      out.push_back(part.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
      if (pos == std::string::npos) break;
      start = pos + 1;
    }
  }
  return out;
}

}  // namespace

void validate(const SemanticWordSet& ws) {
  if (ws.words.empty()) throw Error(ErrorCode::InvalidConfig, "semantic word set is empty");
  if (static_cast<std::size_t>(ws.probs.size()) != ws.words.size()) {
    throw Error(ErrorCode::DimensionMismatch, "word probabilities do not align with words");
  }
  if ((ws.probs.array() < 0.0).any() || std::abs(ws.probs.sum() - 1.0) > 1e-9) {
    throw Error(ErrorCode::InvalidConfig, "word probabilities are not a simplex");
  }
}

WordEmbeddingTable::WordEmbeddingTable(std::size_t dim, std::uint64_t bucket_seed)
    : dim_(dim), bucket_seed_(bucket_seed), matrix_(0, static_cast<Eigen::Index>(dim)) {
  if (dim == 0) throw Error(ErrorCode::InvalidConfig, "word embedding dimension must be > 0");
}

WordEmbeddingTable::WordEmbeddingTable(std::map<std::string, std::size_t> vocabulary, Eigen::MatrixXd matrix,
                                       std::uint64_t bucket_seed)
    : dim_(static_cast<std::size_t>(matrix.cols())),
      bucket_seed_(bucket_seed),
      vocabulary_(std::move(vocabulary)),
      matrix_(std::move(matrix)) {
  if (dim_ == 0) throw Error(ErrorCode::InvalidConfig, "word embedding dimension must be > 0");
  for (const auto& [word, id] : vocabulary_) {
    if (id >= static_cast<std::size_t>(matrix_.rows())) {
      throw Error(ErrorCode::LabelOutOfRange, "word '" + word + "' points past the embedding matrix");
    }
  }
  if (!matrix_.allFinite()) throw Error(ErrorCode::NonFiniteValue, "word embedding matrix");
}

bool WordEmbeddingTable::contains(std::string_view word) const {
  return vocabulary_.count(std::string(word)) > 0 || vocabulary_.count(lowercase(word)) > 0;
}

Eigen::VectorXd WordEmbeddingTable::bucket_vector(std::string_view trigram) const {
  Rng rng(splitmix64(bucket_seed_ ^ fnv1a64(trigram)));
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(dim_)));
  Eigen::VectorXd v(static_cast<Eigen::Index>(dim_));
  for (Eigen::Index j = 0; j < v.size(); ++j) v(j) = normal(rng);
  return v;
}

Eigen::VectorXd WordEmbeddingTable::embed(std::string_view word) const {
  if (auto it = vocabulary_.find(std::string(word)); it != vocabulary_.end()) {
    return matrix_.row(static_cast<Eigen::Index>(it->second)).transpose();
  }
  const std::string lower = lowercase(word);
  if (auto it = vocabulary_.find(lower); it != vocabulary_.end()) {
    return matrix_.row(static_cast<Eigen::Index>(it->second)).transpose();
  }
  if (!allow_fallback || lower.empty()) {
    throw Error(ErrorCode::UnresolvableWord, "no embedding for '" + std::string(word) + "'");
  }
  const std::string padded = "<" + lower + ">";
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim_));
  const std::size_t n = padded.size() - 2;
  for (std::size_t i = 0; i < n; ++i) sum += bucket_vector(std::string_view(padded).substr(i, 3));
  return sum / static_cast<double>(n);
}

WordEmbeddingTable load_word_table(const std::filesystem::path& path) {
  Eigen::MatrixXd matrix = read_bpem_matrix(path);
  const auto meta = detail::read_json(sidecar_path(path));
  std::map<std::string, std::size_t> vocab;
  const auto words = meta.at("vocabulary").get<std::vector<std::string>>();
  if (words.size() != static_cast<std::size_t>(matrix.rows())) {
    throw Error(ErrorCode::DimensionMismatch, "vocabulary size differs from embedding rows in " + path.string());
  }
  for (std::size_t i = 0; i < words.size(); ++i) vocab.emplace(words[i], i);
  return WordEmbeddingTable(std::move(vocab), std::move(matrix));
}

void save_word_table(const WordEmbeddingTable& table, const std::filesystem::path& path) {
  std::vector<std::string> words(static_cast<std::size_t>(table.matrix().rows()));
  for (const auto& [w, id] : table.vocabulary()) words[id] = w;
  write_bpem_matrix(table.matrix(), path);
  detail::write_json({{"vocabulary", words}}, sidecar_path(path));
}

std::vector<std::string> disassemble_label(std::string_view label) {
  std::string_view body = trim(label);
  for (std::string_view suffix : {"(e1,e2)", "(e2,e1)"}) {
    if (body.size() >= suffix.size() && body.substr(body.size() - suffix.size()) == suffix) {
      body.remove_suffix(suffix.size());
      break;
    }
  }
  std::vector<std::string> parts{std::string(body)};
  for (char sep : {'-', ':', '_'}) parts = split_all(parts, sep);
  std::vector<std::string> words;
  for (const auto& p : parts) {
    const auto t = trim(p);
    if (!t.empty()) words.emplace_back(t);
  }
  if (words.empty()) throw Error(ErrorCode::EmptyAfterSplit, "label '" + std::string(label) + "' has no words");
  return words;
}

std::vector<SemanticWordSet> estimate_word_distribution(const std::vector<std::vector<std::string>>& word_sets,
                                                        const std::optional<std::vector<ExampleTokens>>& corpus,
                                                        double alpha) {
  std::unordered_map<std::string, std::size_t> counts;
  if (corpus) {
    for (const auto& ex : *corpus) {
      for (const auto& tok : ex.tokens) ++counts[lowercase(tok)];
    }
  }
  std::vector<SemanticWordSet> out;
  out.reserve(word_sets.size());
  for (std::size_t r = 0; r < word_sets.size(); ++r) {
    SemanticWordSet ws;
    ws.relation_index = r;
    ws.words = word_sets[r];
    if (ws.words.empty()) throw Error(ErrorCode::InvalidConfig, "relation " + std::to_string(r) + " has no words");
    const auto n = static_cast<Eigen::Index>(ws.words.size());
    if (!corpus) {
      ws.probs = Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
    } else {
      ws.probs.resize(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto it = counts.find(lowercase(ws.words[static_cast<std::size_t>(i)]));
        ws.probs(i) = static_cast<double>(it == counts.end() ? 0 : it->second) + alpha;
      }
      ws.probs /= ws.probs.sum();
    }
    out.push_back(std::move(ws));
  }
  return out;
}

Eigen::VectorXd init_label_prompt(const SemanticWordSet& ws, const WordEmbeddingTable& table) {
  validate(ws);
  Eigen::VectorXd e = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(table.dim()));
  for (std::size_t i = 0; i < ws.words.size(); ++i) {
    e += ws.probs(static_cast<Eigen::Index>(i)) * table.embed(ws.words[i]);
  }
  return e;
}

Eigen::VectorXd sample_latent(const Particles& particles, Rng& rng) {
  if (particles.size() < 1) throw Error(ErrorCode::EmptyParticleSet, "cannot sample from an empty particle set");
  std::uniform_int_distribution<Eigen::Index> pick(0, particles.size() - 1);
  return particles.particles.row(pick(rng)).transpose();
}

PromptedExample build_template(const ExampleTokens& ex) {
  const std::size_t n = ex.tokens.size();
  const auto valid = [n](std::size_t b, std::size_t e) { return b < e && e <= n; };
  if (!valid(ex.subject_begin, ex.subject_end) || !valid(ex.object_begin, ex.object_end)) {
    throw Error(ErrorCode::InvalidSpan, "entity span is empty or out of range");
  }
  if (ex.subject_begin < ex.object_end && ex.object_begin < ex.subject_end) {
    throw Error(ErrorCode::InvalidSpan, "subject and object spans overlap");
  }
  if (std::find(ex.tokens.begin(), ex.tokens.end(), kMask) != ex.tokens.end()) {
    throw Error(ErrorCode::InvalidSpan, "input already contains a mask token");
  }

  PromptedExample out;
  for (std::size_t i = 0; i < n; ++i) {
    if (i == ex.subject_begin || i == ex.object_begin) out.tokens.emplace_back(kEntityStart);
    out.tokens.push_back(ex.tokens[i]);
    if (i + 1 == ex.subject_end || i + 1 == ex.object_end) out.tokens.emplace_back(kEntityEnd);
  }
  out.subject_type_index = out.tokens.size();
  out.tokens.emplace_back(kSubjectType);
  out.tokens.insert(out.tokens.end(), ex.tokens.begin() + static_cast<std::ptrdiff_t>(ex.subject_begin),
                    ex.tokens.begin() + static_cast<std::ptrdiff_t>(ex.subject_end));
  out.mask_index = out.tokens.size();
  out.tokens.emplace_back(kMask);
  out.object_type_index = out.tokens.size();
  out.tokens.emplace_back(kObjectType);
  out.tokens.insert(out.tokens.end(), ex.tokens.begin() + static_cast<std::ptrdiff_t>(ex.object_begin),
                    ex.tokens.begin() + static_cast<std::ptrdiff_t>(ex.object_end));
  return out;
}

std::string_view to_string(TypePromptInit init) noexcept {
  switch (init) {
    case TypePromptInit::Latent: return "latent";
    case TypePromptInit::Random: return "random";
    case TypePromptInit::Omitted: return "omitted";
  }
  return "unknown";
}

std::string verbalizer_word(std::string_view relation_name) { return "[rel:" + std::string(relation_name) + "]"; }

void validate(const PromptPack& pack) {
  const auto r = static_cast<Eigen::Index>(pack.n_relations());
  if (pack.label_prompts.rows() != r) {
    throw Error(ErrorCode::DimensionMismatch, "label prompt rows differ from relation count");
  }
  if (pack.type_subject.size() != pack.dim() || pack.type_object.size() != pack.dim()) {
    throw Error(ErrorCode::DimensionMismatch, "type prompt dimension differs from label prompts");
  }
  if (!pack.label_prompts.allFinite() || !pack.type_subject.allFinite() || !pack.type_object.allFinite()) {
    throw Error(ErrorCode::NonFiniteValue, "prompt embeddings");
  }
  if (pack.verbalizer.size() != pack.n_relations()) {
    throw Error(ErrorCode::LabelSpaceMismatch, "verbalizer is not total over the relations");
  }
  if (std::set<std::string>(pack.verbalizer.begin(), pack.verbalizer.end()).size() != pack.verbalizer.size()) {
    throw Error(ErrorCode::LabelSpaceMismatch, "verbalizer is not injective");
  }
}

PromptPack synthesize_prompts(const EmbeddingSet& train, const Particles* particles,
                              const WordEmbeddingTable& table, const PromptOptions& options) {
  if (train.dim() != table.dim()) {
    throw Error(ErrorCode::DimensionMismatch, "word table dimension " + std::to_string(table.dim()) +
                                                  " differs from representation dimension " +
                                                  std::to_string(train.dim()));
  }
  PromptPack pack;
  pack.relation_names = train.relation_names;
  pack.type_init = options.type_init;

  std::vector<std::vector<std::string>> word_sets;
  for (const auto& name : train.relation_names) word_sets.push_back(disassemble_label(name));
  const auto dist = estimate_word_distribution(word_sets, train.tokens);
  pack.label_prompts.resize(static_cast<Eigen::Index>(dist.size()), static_cast<Eigen::Index>(table.dim()));
  for (const auto& ws : dist) {
    pack.label_prompts.row(static_cast<Eigen::Index>(ws.relation_index)) = init_label_prompt(ws, table).transpose();
  }
  for (const auto& name : train.relation_names) pack.verbalizer.push_back(verbalizer_word(name));

  const auto d = static_cast<Eigen::Index>(table.dim());
  switch (options.type_init) {
    case TypePromptInit::Latent: {
      if (!particles) throw Error(ErrorCode::EmptyParticleSet, "latent type prompts need transported particles");
      if (particles->dim() != d) throw Error(ErrorCode::DimensionMismatch, "particle dimension");
      pack.omega_seed = substream_seed(options.seed, "omega");
      Rng rng(pack.omega_seed);
      pack.type_subject = init_type_prompt(sample_latent(*particles, rng));
      pack.type_object = init_type_prompt(sample_latent(*particles, rng));
      break;
    }
    case TypePromptInit::Random: {
      pack.omega_seed = substream_seed(options.seed, "type-random");
      Rng rng(pack.omega_seed);
      std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
      pack.type_subject.resize(d);
      pack.type_object.resize(d);
      for (Eigen::Index j = 0; j < d; ++j) pack.type_subject(j) = normal(rng);
      for (Eigen::Index j = 0; j < d; ++j) pack.type_object(j) = normal(rng);
      break;
    }
    case TypePromptInit::Omitted:
      pack.has_type_prompts = false;
      pack.type_subject = Eigen::VectorXd::Zero(d);
      pack.type_object = Eigen::VectorXd::Zero(d);
      break;
  }
  validate(pack);
  return pack;
}

namespace detail {

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::IoFailure, "malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_json(const nlohmann::json& j, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::IoFailure, "write failed: " + path.string());
}

nlohmann::json pack_metadata(const PromptPack& pack) {
  return {{"kind", "prompt_pack"},
          {"relation_names", pack.relation_names},
          {"verbalizer", pack.verbalizer},
          {"has_type_prompts", pack.has_type_prompts},
          {"type_init", std::string(to_string(pack.type_init))},
          {"omega_seed", pack.omega_seed}};
}

Eigen::MatrixXd pack_rows(const PromptPack& pack) {
  Eigen::MatrixXd rows(pack.label_prompts.rows() + 2, pack.dim());
  rows.topRows(pack.label_prompts.rows()) = pack.label_prompts;
  rows.row(pack.label_prompts.rows()) = pack.type_subject.transpose();
  rows.row(pack.label_prompts.rows() + 1) = pack.type_object.transpose();
  return rows;
}

PromptPack pack_from(const Eigen::MatrixXd& rows, const nlohmann::json& meta) {
  try {
    PromptPack pack;
    pack.relation_names = meta.at("relation_names").get<std::vector<std::string>>();
    pack.verbalizer = meta.at("verbalizer").get<std::vector<std::string>>();
    pack.has_type_prompts = meta.at("has_type_prompts").get<bool>();
    pack.omega_seed = meta.at("omega_seed").get<std::uint64_t>();
    const auto init = meta.at("type_init").get<std::string>();
    pack.type_init = init == "latent" ? TypePromptInit::Latent
                     : init == "random" ? TypePromptInit::Random
                                        : TypePromptInit::Omitted;
    const auto r = static_cast<Eigen::Index>(pack.relation_names.size());
    if (rows.rows() != r + 2) {
      throw Error(ErrorCode::TruncatedPayload, "prompt pack needs " + std::to_string(r + 2) + " rows");
    }
    pack.label_prompts = rows.topRows(r);
    pack.type_subject = rows.row(r).transpose();
    pack.type_object = rows.row(r + 1).transpose();
    validate(pack);
    return pack;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::IoFailure, std::string("malformed prompt pack metadata: ") + e.what());
  }
}

}  // namespace detail

void save_prompt_pack(const PromptPack& pack, const std::filesystem::path& path) {
  validate(pack);
  write_bpem_matrix(detail::pack_rows(pack), path);
  detail::write_json(detail::pack_metadata(pack), sidecar_path(path));
}

PromptPack load_prompt_pack(const std::filesystem::path& path) {
  return detail::pack_from(read_bpem_matrix(path), detail::read_json(sidecar_path(path)));
}

}  // namespace bayesprompt
