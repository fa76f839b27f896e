#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "bayesprompt/embedding_store.hpp"
#include "bayesprompt/seed.hpp"
#include "bayesprompt/svgd.hpp"

namespace bayesprompt {

/// Semantic words of one relation with their probabilities.
struct SemanticWordSet {
  std::size_t relation_index = 0;
  std::vector<std::string> words;
  Eigen::VectorXd probs;
};

void validate(const SemanticWordSet& ws);

/// Word-embedding layer. Words missing from `vocabulary` (also after
/// lowercasing) resolve to the mean of their character-trigram bucket
/// vectors; bucket vectors are a pure function of the trigram and
/// `bucket_seed`, drawn N(0, 1/D).
class WordEmbeddingTable {
 public:
  explicit WordEmbeddingTable(std::size_t dim, std::uint64_t bucket_seed = 0x5eed);
  WordEmbeddingTable(std::map<std::string, std::size_t> vocabulary, Eigen::MatrixXd matrix,
                     std::uint64_t bucket_seed = 0x5eed);

  std::size_t dim() const noexcept { return dim_; }
  const std::map<std::string, std::size_t>& vocabulary() const noexcept { return vocabulary_; }
  const Eigen::MatrixXd& matrix() const noexcept { return matrix_; }

  bool allow_fallback = true;

  bool contains(std::string_view word) const;
  /// Throws UnresolvableWord when the word is out of vocabulary and has no
  /// trigram (empty) or fallback is disabled.
  Eigen::VectorXd embed(std::string_view word) const;
  Eigen::VectorXd bucket_vector(std::string_view trigram) const;

 private:
  std::size_t dim_;
  std::uint64_t bucket_seed_;
  std::map<std::string, std::size_t> vocabulary_;
  Eigen::MatrixXd matrix_;
};

/// Table whose rows are stored as a BPEM payload with a sidecar
/// `{"vocabulary": [word, ...]}` naming row i.
WordEmbeddingTable load_word_table(const std::filesystem::path& path);
void save_word_table(const WordEmbeddingTable& table, const std::filesystem::path& path);

/// "Component-Whole(e1,e2)" -> {"Component", "Whole"}. Strips a trailing
/// (e1,e2)/(e2,e1), then splits on '-', ':' and '_'.
std::vector<std::string> disassemble_label(std::string_view label);

/// phi_r[i] proportional to (case-insensitive count of word i in the corpus
/// tokens) + alpha. Uniform when there are no corpus tokens.
std::vector<SemanticWordSet> estimate_word_distribution(const std::vector<std::vector<std::string>>& word_sets,
                                                        const std::optional<std::vector<ExampleTokens>>& corpus,
                                                        double alpha = 1.0);

/// sum_i phi_r[i] * e(word_i)
Eigen::VectorXd init_label_prompt(const SemanticWordSet& ws, const WordEmbeddingTable& table);

/// One particle row chosen uniformly; advances `rng`.
Eigen::VectorXd sample_latent(const Particles& particles, Rng& rng);

inline Eigen::VectorXd init_type_prompt(const Eigen::VectorXd& omega) { return omega; }

inline constexpr std::string_view kEntityStart = "[E]";
inline constexpr std::string_view kEntityEnd = "[/E]";
inline constexpr std::string_view kSubjectType = "[SUB-TYPE]";
inline constexpr std::string_view kObjectType = "[OBJ-TYPE]";
inline constexpr std::string_view kMask = "[MASK]";

struct PromptedExample {
  std::vector<std::string> tokens;
  std::size_t mask_index = 0;
  std::size_t subject_type_index = 0;
  std::size_t object_type_index = 0;
};

/// Wraps each entity in [E] ... [/E] and appends
/// "[SUB-TYPE] subject [MASK] [OBJ-TYPE] object".
/// Throws InvalidSpan for empty, out-of-range or overlapping spans.
PromptedExample build_template(const ExampleTokens& example);

enum class TypePromptInit {
  /// Two independent draws from the transported particles.
  Latent,
  /// N(0, 1/D) per coordinate, like a fresh token embedding.
  Random,
  /// No type prompts at all.
  Omitted,
};

std::string_view to_string(TypePromptInit init) noexcept;

struct PromptPack {
  std::vector<std::string> relation_names;
  Eigen::MatrixXd label_prompts;  // one row per relation
  Eigen::VectorXd type_subject;
  Eigen::VectorXd type_object;
  bool has_type_prompts = true;
  /// verbalizer[y] is the label word filled at the mask for class y.
  std::vector<std::string> verbalizer;
  std::uint64_t omega_seed = 0;
  TypePromptInit type_init = TypePromptInit::Latent;

  std::size_t n_relations() const noexcept { return relation_names.size(); }
  Eigen::Index dim() const noexcept { return label_prompts.cols(); }
};

void validate(const PromptPack& pack);

std::string verbalizer_word(std::string_view relation_name);

struct PromptOptions {
  TypePromptInit type_init = TypePromptInit::Latent;
  std::uint64_t seed = 0;
};

/// Label prompts from disassembled relation names weighted by corpus
/// frequency; type prompts per `options.type_init`. `particles` is only read
/// for TypePromptInit::Latent.
PromptPack synthesize_prompts(const EmbeddingSet& train, const Particles* particles,
                              const WordEmbeddingTable& table, const PromptOptions& options);

/// BPEM rows: label prompts, then subject and object type prompts; sidecar
/// carries names, verbalizer and seeds.
void save_prompt_pack(const PromptPack& pack, const std::filesystem::path& path);
PromptPack load_prompt_pack(const std::filesystem::path& path);

}  // namespace bayesprompt
