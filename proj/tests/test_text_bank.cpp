#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "ovd/error.hpp"
#include "ovd/text_bank.hpp"

using namespace ovd;

namespace {

double cosine(const Tensor& bank, std::int64_t a, std::int64_t b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::int64_t j = 0; j < bank.cols(); ++j) {
    dot += bank.at(a, j) * bank.at(b, j);
    na += bank.at(a, j) * bank.at(a, j);
    nb += bank.at(b, j) * bank.at(b, j);
  }
  return dot / std::sqrt(na * nb);
}

}  // namespace

TEST_CASE("vocabulary construction and normalization") {
  const auto v = ClassVocabulary::from_names({"Red  Circle", "blue square"}, {0, 1});
  CHECK(v.names[0] == "red circle");
  CHECK(v.index_of("RED CIRCLE") == 0);
  CHECK(v.base_indices() == std::vector<std::int64_t>{0});
  CHECK(v.novel_indices() == std::vector<std::int64_t>{1});
  CHECK_THROWS_AS(ClassVocabulary::from_names({}), ContractError);
  CHECK_THROWS_AS(ClassVocabulary::from_names({"a", "a"}), ContractError);
  CHECK_THROWS_AS(ClassVocabulary::from_names({"a"}, {1}), ContractError);
}

TEST_CASE("vocabulary file round trip") {
  const std::string path = "vocab_test.txt";
  {
    std::ofstream out(path);
    out << "red circle\n";
    out << "blue square\tnovel\n";
    out << "\n";
    out << "green ring\n";
  }
  const auto v = load_vocabulary_file(path);
  REQUIRE(v.size() == 3);
  CHECK(v.is_novel[1] == 1);
  CHECK(v.is_novel[2] == 0);
  std::remove(path.c_str());
  CHECK_THROWS_AS(load_vocabulary_file("missing_file.txt"), IoError);
}

TEST_CASE("embeddings are deterministic, unit-norm and compositional") {
  const auto vocab = ClassVocabulary::from_names(
      {"red circle", "red square", "blue square", "blue circle"});
  const auto bank = embed_class_names(vocab, 64);
  const auto bank2 = embed_class_names(vocab, 64);

  for (std::int64_t i = 0; i < bank.embeddings.rows(); ++i) {
    double sq = 0.0;
    for (std::int64_t j = 0; j < 64; ++j) {
      CHECK(bank.embeddings.at(i, j) == bank2.embeddings.at(i, j));  // determinism
      sq += bank.embeddings.at(i, j) * bank.embeddings.at(i, j);
    }
    CHECK(std::abs(std::sqrt(sq) - 1.0) < 1e-9);
  }

  // shared tokens pull embeddings together
  CHECK(cosine(bank.embeddings, 0, 1) > cosine(bank.embeddings, 0, 2));
  CHECK(cosine(bank.embeddings, 0, 3) > cosine(bank.embeddings, 0, 2));

  CHECK_THROWS_AS(embed_class_names(vocab, 4), ContractError);
}

TEST_CASE("identical names embed identically across vocabularies") {
  const auto v1 = ClassVocabulary::from_names({"red circle", "blue square"});
  const auto v2 = ClassVocabulary::from_names({"blue square", "green ring"});
  const auto b1 = embed_class_names(v1, 32);
  const auto b2 = embed_class_names(v2, 32);
  for (std::int64_t j = 0; j < 32; ++j) CHECK(b1.embeddings.at(1, j) == b2.embeddings.at(0, j));
}

TEST_CASE("sampling saturation, exhaustion and determinism") {
  const auto vocab = ClassVocabulary::from_names({"a x", "b x", "c x"});
  const auto bank = embed_class_names(vocab, 16);

  SUBCASE("all classes fit exactly") {
    SamplingPolicy p{3, 99};
    const auto s = sample_training_classes(vocab, bank, {0, 1, 2}, p);
    std::set<std::int64_t> seen(s.slot_to_class.begin(), s.slot_to_class.end());
    CHECK(seen == std::set<std::int64_t>{0, 1, 2});
    CHECK(s.valid_count() == 3);
  }
  SUBCASE("padding fills exhausted vocabulary") {
    SamplingPolicy p{5, 4};
    const auto s = sample_training_classes(vocab, bank, {0}, p);
    CHECK(s.slots() == 5);
    CHECK(s.valid_count() == 3);
    std::int64_t padding = 0;
    for (std::size_t i = 0; i < s.valid.size(); ++i) {
      if (!s.valid[i]) {
        ++padding;
        CHECK(s.slot_to_class[i] == -1);
        for (std::int64_t j = 0; j < s.dim(); ++j) CHECK(s.embeddings.at(static_cast<std::int64_t>(i), j) == 0.0);
      }
    }
    CHECK(padding == 2);
  }
  SUBCASE("fixed seed reproduces the slot order") {
    SamplingPolicy p{3, 1234};
    const auto s1 = sample_training_classes(vocab, bank, {1}, p);
    const auto s2 = sample_training_classes(vocab, bank, {1}, p);
    CHECK(s1.slot_to_class == s2.slot_to_class);
  }
  SUBCASE("capacity and contract errors") {
    SamplingPolicy p{1, 0};
    CHECK_THROWS_AS(sample_training_classes(vocab, bank, {0, 1}, p), CapacityError);
    SamplingPolicy q{3, 0};
    CHECK_THROWS_AS(sample_training_classes(vocab, bank, {7}, q), ContractError);
  }
}

TEST_CASE("positives always included") {
  const auto vocab = ClassVocabulary::from_names({"a x", "b x", "c x", "d x", "e x"});
  const auto bank = embed_class_names(vocab, 16);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    SamplingPolicy p{3, seed};
    const auto s = sample_training_classes(vocab, bank, {2, 4}, p);
    std::set<std::int64_t> seen(s.slot_to_class.begin(), s.slot_to_class.end());
    CHECK(seen.count(2) == 1);
    CHECK(seen.count(4) == 1);
  }
}

TEST_CASE("slot zero is uniform over 10k shuffles") {
  const auto vocab = ClassVocabulary::from_names({"a x", "b x", "c x", "d x", "e x"});
  const auto bank = embed_class_names(vocab, 16);
  std::array<std::int64_t, 5> hits{};
  const int trials = 10000;
  for (int t = 0; t < trials; ++t) {
    SamplingPolicy p{5, static_cast<std::uint64_t>(t) + 1};
    const auto s = sample_training_classes(vocab, bank, {}, p);
    ++hits[static_cast<std::size_t>(s.slot_to_class[0])];
  }
  for (const auto h : hits) {
    const double freq = static_cast<double>(h) / trials;
    CHECK(freq == doctest::Approx(0.2).epsilon(0.1));  // 0.2 +/- 0.02
  }
}

TEST_CASE("bank subset and permutation bookkeeping") {
  const auto vocab = ClassVocabulary::from_names({"a x", "b x", "c x"});
  const auto bank = embed_class_names(vocab, 16);
  const auto sub = bank.subset({2, 0});
  CHECK(sub.slot_to_class == std::vector<std::int64_t>{2, 0});
  CHECK(sub.slot_of_class(0) == 1);
  CHECK(sub.slot_of_class(1) == -1);
  const auto padded = sub.with_padding(2);
  CHECK(padded.slots() == 4);
  const auto perm = padded.permuted({3, 2, 1, 0});
  CHECK(perm.slot_to_class[3] == 2);
  CHECK(perm.valid[0] == 0);
}
