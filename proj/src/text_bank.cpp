#include "ovd/text_bank.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "ovd/error.hpp"
#include "ovd/rng.hpp"

namespace ovd {

namespace {

constexpr std::uint64_t kTokenSalt = 0x5ee76a21cf0b3d11ULL;

std::string normalize_name(const std::string& raw) {
  std::string s;
  s.reserve(raw.size());
  bool prev_space = true;
  for (const char c : raw) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!prev_space) s.push_back(' ');
      prev_space = true;
    } else {
      s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
      prev_space = false;
    }
  }
  while (!s.empty() && s.back() == ' ') s.pop_back();
  return s;
}

std::vector<std::string> split_tokens(const std::string& name) {
  std::vector<std::string> tokens;
  std::istringstream is(name);
  std::string tok;
  while (is >> tok) tokens.push_back(tok);
  return tokens;
}

// Fixed unit vector per token, a pure function of (token, d).
std::vector<double> token_vector(const std::string& token, std::int64_t d) {
  Rng rng(fnv1a64(token) ^ kTokenSalt);
  std::vector<double> v(static_cast<std::size_t>(d));
  double sq = 0.0;
  for (auto& x : v) {
    x = rng.normal();
    sq += x * x;
  }
  const double norm = std::sqrt(sq);
  for (auto& x : v) x /= norm;
  return v;
}

}  // namespace

std::int64_t ClassVocabulary::index_of(const std::string& name) const {
  const std::string n = normalize_name(name);
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == n) return static_cast<std::int64_t>(i);
  }
  return -1;
}

std::vector<std::int64_t> ClassVocabulary::base_indices() const {
  std::vector<std::int64_t> out;
  for (std::size_t i = 0; i < names.size(); ++i)
    if (!is_novel[i]) out.push_back(static_cast<std::int64_t>(i));
  return out;
}

std::vector<std::int64_t> ClassVocabulary::novel_indices() const {
  std::vector<std::int64_t> out;
  for (std::size_t i = 0; i < names.size(); ++i)
    if (is_novel[i]) out.push_back(static_cast<std::int64_t>(i));
  return out;
}

ClassVocabulary ClassVocabulary::from_names(std::vector<std::string> raw,
                                            std::vector<std::uint8_t> novel) {
  if (raw.empty()) throw ContractError("vocabulary: empty class list");
  if (!novel.empty() && novel.size() != raw.size()) {
    throw ContractError("vocabulary: role list length does not match name list");
  }
  ClassVocabulary v;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const std::string n = normalize_name(raw[i]);
    if (n.empty()) throw ContractError("vocabulary: empty class name at index " + std::to_string(i));
    if (!seen.insert(n).second) throw ContractError("vocabulary: duplicate class name '" + n + "'");
    v.names.push_back(n);
    v.is_novel.push_back(novel.empty() ? 0 : novel[i]);
  }
  if (v.base_indices().empty()) throw ContractError("vocabulary: needs at least one base class");
  return v;
}

void ClassVocabulary::apply_novel_split(const std::vector<std::string>& novel_names) {
  std::vector<std::string> unknown;
  for (const auto& raw : novel_names) {
    const std::int64_t idx = index_of(raw);
    if (idx < 0) {
      unknown.push_back(normalize_name(raw));
      continue;
    }
    is_novel[static_cast<std::size_t>(idx)] = 1;
  }
  if (!unknown.empty()) {
    std::string msg = "novel split names unknown to vocabulary:";
    for (const auto& n : unknown) msg += " '" + n + "'";
    throw IoError(msg);
  }
  if (base_indices().empty()) throw ContractError("vocabulary: split leaves no base class");
}

ClassVocabulary load_vocabulary_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("vocabulary file not readable: " + path);
  std::vector<std::string> names;
  std::vector<std::uint8_t> novel;
  std::string line;
  while (std::getline(in, line)) {
    if (normalize_name(line).empty()) continue;
    const auto tab = line.find('\t');
    if (tab != std::string::npos) {
      const std::string tag = normalize_name(line.substr(tab + 1));
      if (tag != "novel" && !tag.empty()) {
        throw IoError("vocabulary file " + path + ": unknown tag '" + tag + "'");
      }
      names.push_back(line.substr(0, tab));
      novel.push_back(tag == "novel" ? 1 : 0);
    } else {
      names.push_back(line);
      novel.push_back(0);
    }
  }
  return ClassVocabulary::from_names(std::move(names), std::move(novel));
}

std::int64_t ClassEmbeddingBank::valid_count() const {
  std::int64_t n = 0;
  for (const auto v : valid) n += (v != 0);
  return n;
}

std::int64_t ClassEmbeddingBank::slot_of_class(std::int64_t class_idx) const {
  for (std::size_t s = 0; s < slot_to_class.size(); ++s) {
    if (slot_to_class[s] == class_idx) return static_cast<std::int64_t>(s);
  }
  return -1;
}

ClassEmbeddingBank ClassEmbeddingBank::subset(const std::vector<std::int64_t>& class_indices) const {
  if (class_indices.empty()) throw ContractError("bank subset: empty class list");
  std::vector<std::int64_t> rows;
  for (const auto ci : class_indices) {
    const std::int64_t s = slot_of_class(ci);
    if (s < 0) throw ContractError("bank subset: class " + std::to_string(ci) + " not in bank");
    rows.push_back(s);
  }
  ClassEmbeddingBank out;
  out.embeddings = gather_rows(embeddings, rows);
  out.valid.assign(class_indices.size(), 1);
  out.slot_to_class = class_indices;
  return out;
}

ClassEmbeddingBank ClassEmbeddingBank::with_padding(std::int64_t count) const {
  ClassEmbeddingBank out;
  const std::int64_t n = slots(), d = dim();
  std::vector<double> data(static_cast<std::size_t>((n + count) * d), 0.0);
  const auto src = embeddings.values();
  std::copy(src.begin(), src.end(), data.begin());
  out.embeddings = Tensor::from({n + count, d}, std::move(data));
  out.valid = valid;
  out.valid.insert(out.valid.end(), static_cast<std::size_t>(count), 0);
  out.slot_to_class = slot_to_class;
  out.slot_to_class.insert(out.slot_to_class.end(), static_cast<std::size_t>(count), -1);
  return out;
}

ClassEmbeddingBank ClassEmbeddingBank::permuted(const std::vector<std::int64_t>& perm) const {
  if (static_cast<std::int64_t>(perm.size()) != slots()) {
    throw ContractError("bank permuted: permutation length != slot count");
  }
  ClassEmbeddingBank out;
  out.embeddings = gather_rows(embeddings, perm);
  out.valid.resize(perm.size());
  out.slot_to_class.resize(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    out.valid[i] = valid[static_cast<std::size_t>(perm[i])];
    out.slot_to_class[i] = slot_to_class[static_cast<std::size_t>(perm[i])];
  }
  return out;
}

ClassEmbeddingBank embed_class_names(const ClassVocabulary& vocab, std::int64_t d) {
  if (vocab.size() == 0) throw ContractError("embed_class_names: empty vocabulary");
  if (d < 8) throw ContractError("embed_class_names: embedding dim must be >= 8");
  const std::int64_t n = vocab.size();
  std::vector<double> data(static_cast<std::size_t>(n * d), 0.0);
  for (std::int64_t i = 0; i < n; ++i) {
    const auto tokens = split_tokens(vocab.names[static_cast<std::size_t>(i)]);
    std::vector<double> acc(static_cast<std::size_t>(d), 0.0);
    for (const auto& tok : tokens) {
      const auto tv = token_vector(tok, d);
      for (std::size_t j = 0; j < tv.size(); ++j) acc[j] += tv[j];
    }
    double sq = 0.0;
    for (const double v : acc) sq += v * v;
    const double norm = std::max(std::sqrt(sq), 1e-12);
    for (std::int64_t j = 0; j < d; ++j)
      data[static_cast<std::size_t>(i * d + j)] = acc[static_cast<std::size_t>(j)] / norm;
  }
  ClassEmbeddingBank bank;
  bank.embeddings = Tensor::from({n, d}, std::move(data));
  bank.valid.assign(static_cast<std::size_t>(n), 1);
  bank.slot_to_class.resize(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) bank.slot_to_class[static_cast<std::size_t>(i)] = i;
  return bank;
}

ClassEmbeddingBank sample_training_classes(const ClassVocabulary& vocab,
                                           const ClassEmbeddingBank& full_bank,
                                           const std::vector<std::int64_t>& positives,
                                           const SamplingPolicy& policy) {
  if (policy.n_slots < 1) throw ContractError("sample_training_classes: n_slots must be >= 1");
  std::set<std::int64_t> pos_set;
  for (const auto p : positives) {
    if (p < 0 || p >= vocab.size()) {
      throw ContractError("sample_training_classes: positive index " + std::to_string(p) +
                          " outside vocabulary");
    }
    pos_set.insert(p);
  }
  if (static_cast<std::int64_t>(pos_set.size()) > policy.n_slots) {
    throw CapacityError("sample_training_classes: " + std::to_string(pos_set.size()) +
                        " positives exceed " + std::to_string(policy.n_slots) + " slots");
  }

  Rng rng(policy.seed);
  std::vector<std::int64_t> chosen(pos_set.begin(), pos_set.end());
  std::vector<std::int64_t> negatives;
  for (std::int64_t c = 0; c < vocab.size(); ++c)
    if (!pos_set.count(c)) negatives.push_back(c);
  const auto need = static_cast<std::size_t>(policy.n_slots) - chosen.size();
  const auto drawn = rng.sample_without_replacement(negatives, need);
  chosen.insert(chosen.end(), drawn.begin(), drawn.end());

  const std::int64_t padding = policy.n_slots - static_cast<std::int64_t>(chosen.size());
  ClassEmbeddingBank bank = full_bank.subset(chosen);
  if (padding > 0) bank = bank.with_padding(padding);

  std::vector<std::int64_t> order(static_cast<std::size_t>(policy.n_slots));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::int64_t>(i);
  rng.shuffle(order);
  return bank.permuted(order);
}

}  // namespace ovd
