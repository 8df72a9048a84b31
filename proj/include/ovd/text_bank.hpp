#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ovd/tensor.hpp"

namespace ovd {

// Ordered class vocabulary with base/novel roles. Names are unique, non-empty
// and lowercase-normalized on construction.
struct ClassVocabulary {
  std::vector<std::string> names;
  std::vector<std::uint8_t> is_novel;

  std::int64_t size() const { return static_cast<std::int64_t>(names.size()); }
  std::int64_t index_of(const std::string& name) const;  // -1 when absent
  std::vector<std::int64_t> base_indices() const;
  std::vector<std::int64_t> novel_indices() const;

  static ClassVocabulary from_names(std::vector<std::string> names,
                                    std::vector<std::uint8_t> is_novel = {});
  // Marks every vocabulary entry named in `novel_names` as novel.
  // Unknown names throw IoError listing them.
  void apply_novel_split(const std::vector<std::string>& novel_names);
};

// One class name per line; an optional "\tnovel" suffix marks novel classes.
ClassVocabulary load_vocabulary_file(const std::string& path);

// Class embeddings laid out in slots. Padding slots hold the empty token
// (all-zeros row), are flagged invalid, and map to no vocabulary class.
struct ClassEmbeddingBank {
  Tensor embeddings;                       // [n_slots, d]
  SlotMask valid;                          // length n_slots
  std::vector<std::int64_t> slot_to_class; // -1 for padding slots

  std::int64_t slots() const { return embeddings.rows(); }
  std::int64_t dim() const { return embeddings.cols(); }
  std::int64_t valid_count() const;
  std::int64_t slot_of_class(std::int64_t class_idx) const;  // -1 when absent

  // Bank restricted to the given vocabulary classes, in the given order.
  ClassEmbeddingBank subset(const std::vector<std::int64_t>& class_indices) const;
  // Copy with `count` padding slots appended.
  ClassEmbeddingBank with_padding(std::int64_t count) const;
  // Copy with valid slots permuted by `perm` (a permutation of slot indices).
  ClassEmbeddingBank permuted(const std::vector<std::int64_t>& perm) const;
};

struct SamplingPolicy {
  std::int64_t n_slots = 8;
  std::uint64_t seed = 0;
};

// Deterministic text-encoder stand-in: every whitespace token hashes to a
// fixed unit vector, a class embeds as the normalized token sum, so classes
// sharing tokens land near each other and novel color/shape combinations lie
// in the span of seen tokens.
ClassEmbeddingBank embed_class_names(const ClassVocabulary& vocab, std::int64_t d);

// Training-time slot sampling: all positives kept, negatives drawn uniformly
// without replacement, padding when the vocabulary is exhausted, final order
// shuffled under the policy seed. `full_bank` is the cached embedding of the
// complete vocabulary.
ClassEmbeddingBank sample_training_classes(const ClassVocabulary& vocab,
                                           const ClassEmbeddingBank& full_bank,
                                           const std::vector<std::int64_t>& positives,
                                           const SamplingPolicy& policy);

}  // namespace ovd
