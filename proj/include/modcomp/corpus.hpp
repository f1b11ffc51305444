#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "modcomp/errors.hpp"

namespace modcomp {

using TokenSeq = std::vector<int>;

// Closed word vocabulary. Ids are contiguous from 0 with three reserved slots.
struct Vocab {
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBos = 2;
  static constexpr int kReserved = 3;

  std::vector<std::string> id_to_token;
  std::unordered_map<std::string, int> token_to_id;

  static Vocab with_reserved();
  int add(const std::string& token);
  int lookup(const std::string& token) const;  // kUnk when absent
  int size() const { return static_cast<int>(id_to_token.size()); }
};

struct DomainCorpus {
  std::string domain_id;
  std::string source;  // "synthetic", "mixture", or a file path
  std::map<std::string, std::vector<TokenSeq>> splits;  // train / dev / eval

  const std::vector<TokenSeq>& split(const std::string& name) const;
};

struct MixtureSpec {
  std::string domain_id;
  std::vector<int> components;   // indices into the synthetic domains
  std::vector<double> weights;   // same length, positive
};

struct SyntheticSpec {
  int n_domains = 4;
  int vocab_size = 240;
  double shared_fraction = 0.2;            // fraction of the non-reserved vocabulary shared by all domains
  std::map<std::string, int> tokens_per_split = {{"train", 6144}, {"dev", 2048}, {"eval", 2048}};
  double zipf_exponent = 1.1;
  std::uint64_t seed = 7;
  std::vector<MixtureSpec> mixtures;       // extra eval-only domains sampled from component unigrams
};

struct CorpusSet {
  Vocab vocab;
  std::vector<DomainCorpus> domains;                  // primary domains first, then mixtures
  std::vector<std::string> training_domain_ids;       // primary synthetic / non-eval file domains
  std::vector<std::vector<int>> domain_token_sets;    // per primary domain: usable token ids

  const DomainCorpus& domain(const std::string& id) const;
};

CorpusSet generate_synthetic(const SyntheticSpec& spec);

// One UTF-8 file per domain, one paragraph per line; 80/10/10 split by line
// hash. eval_domain_ids marks which domains are for evaluation only.
CorpusSet ingest_external(const std::map<std::string, std::filesystem::path>& files,
                          int vocab_budget, const std::vector<std::string>& eval_domain_ids);

TokenSeq tokenize(const std::string& text, const Vocab& vocab);
std::string detokenize(const TokenSeq& ids, const Vocab& vocab);  // skips BOS/PAD

std::vector<TokenSeq> sample_sequences(const DomainCorpus& corpus, const std::string& split, int n,
                                       int len, std::uint64_t seed);

// Jaccard overlap of non-reserved token types between the given splits.
double type_overlap(const DomainCorpus& a, const DomainCorpus& b, const std::string& split);

void save_corpus(const std::filesystem::path& dir, const CorpusSet& corpus);
CorpusSet load_corpus(const std::filesystem::path& dir);

}  // namespace modcomp
