#include "modcomp/corpus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "modcomp/rng.hpp"

namespace modcomp {

namespace {
using nlohmann::json;

std::string zero_pad(int value, int width) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%0*d", width, value);
  return buf;
}

const std::vector<std::string> kSplitNames = {"train", "dev", "eval"};

// Unigram model over a fixed token list with Zipf-distributed ranks.
struct UnigramModel {
  std::vector<int> tokens;          // rank order, most frequent first
  DiscreteSampler sampler;

  UnigramModel(std::vector<int> toks, double exponent)
      : tokens(std::move(toks)), sampler(zipf_weights(tokens.size(), exponent)) {}

  static std::vector<double> zipf_weights(std::size_t n, double exponent) {
    std::vector<double> w(n);
    for (std::size_t r = 0; r < n; ++r) w[r] = 1.0 / std::pow(static_cast<double>(r + 1), exponent);
    return w;
  }

  int sample(Rng& rng) const { return tokens[sampler.sample(rng)]; }
};

// Fills one split with sequences until the token budget is met, skipping
// duplicates already present in `seen` so the splits stay disjoint.
std::vector<TokenSeq> make_split(const std::vector<const UnigramModel*>& models,
                                 const std::vector<double>& model_weights, int token_budget,
                                 Rng& rng, std::set<TokenSeq>& seen) {
  std::vector<TokenSeq> out;
  DiscreteSampler pick(model_weights);
  int tokens = 0;
  while (tokens < token_budget) {
    const UnigramModel& model = *models[models.size() == 1 ? 0 : pick.sample(rng)];
    const int len = rng.next_int(8, 24);
    TokenSeq seq;
    seq.reserve(len + 1);
    seq.push_back(Vocab::kBos);
    for (int i = 0; i < len; ++i) seq.push_back(model.sample(rng));
    if (!seen.insert(seq).second) continue;
    tokens += len;
    out.push_back(std::move(seq));
  }
  return out;
}

void check_split_nonempty(const DomainCorpus& d) {
  for (const auto& name : kSplitNames) {
    auto it = d.splits.find(name);
    if (it == d.splits.end() || it->second.empty())
      throw DataError("corpus: domain '" + d.domain_id + "' has an empty '" + name + "' split");
  }
}

}  // namespace

Vocab Vocab::with_reserved() {
  Vocab v;
  v.add("<pad>");
  v.add("<unk>");
  v.add("<bos>");
  return v;
}

int Vocab::add(const std::string& token) {
  auto it = token_to_id.find(token);
  if (it != token_to_id.end()) return it->second;
  const int id = static_cast<int>(id_to_token.size());
  id_to_token.push_back(token);
  token_to_id.emplace(token, id);
  return id;
}

int Vocab::lookup(const std::string& token) const {
  auto it = token_to_id.find(token);
  return it == token_to_id.end() ? kUnk : it->second;
}

const std::vector<TokenSeq>& DomainCorpus::split(const std::string& name) const {
  auto it = splits.find(name);
  if (it == splits.end())
    throw LookupError("corpus: domain '" + domain_id + "' has no split '" + name + "'");
  return it->second;
}

const DomainCorpus& CorpusSet::domain(const std::string& id) const {
  for (const auto& d : domains)
    if (d.domain_id == id) return d;
  throw LookupError("corpus: unknown domain '" + id + "'");
}

CorpusSet generate_synthetic(const SyntheticSpec& spec) {
  if (spec.n_domains < 1) throw ConfigError("synthetic spec: need at least one domain");
  if (spec.vocab_size < spec.n_domains * 8 + Vocab::kReserved)
    throw ConfigError("synthetic spec: vocab_size must be >= n_domains*8 + reserved");
  if (spec.shared_fraction < 0.0 || spec.shared_fraction > 1.0)
    throw ConfigError("synthetic spec: shared_fraction must lie in [0, 1]");
  if (spec.zipf_exponent <= 0.0) throw ConfigError("synthetic spec: zipf exponent must be positive");
  for (const auto& [name, budget] : spec.tokens_per_split)
    if (budget < 1) throw ConfigError("synthetic spec: token budget for '" + name + "' must be >= 1");
  for (const auto& name : kSplitNames)
    if (!spec.tokens_per_split.count(name))
      throw ConfigError("synthetic spec: missing token budget for split '" + name + "'");

  const int usable = spec.vocab_size - Vocab::kReserved;
  const int shared = static_cast<int>(std::llround(spec.shared_fraction * usable));
  const int per_domain = (usable - shared) / spec.n_domains;
  if (spec.shared_fraction < 1.0 && per_domain < 1)
    throw ConfigError("synthetic spec: not enough exclusive tokens per domain");

  CorpusSet out;
  out.vocab = Vocab::with_reserved();
  const int width = spec.vocab_size >= 10000 ? 5 : 4;
  for (int i = 0; i < usable; ++i) out.vocab.add("w" + zero_pad(i, width));

  std::vector<int> shared_tokens;
  for (int i = 0; i < shared; ++i) shared_tokens.push_back(Vocab::kReserved + i);

  std::vector<UnigramModel> models;
  models.reserve(spec.n_domains);
  for (int d = 0; d < spec.n_domains; ++d) {
    std::vector<int> tokens = shared_tokens;
    const int base = Vocab::kReserved + shared + d * per_domain;
    for (int i = 0; i < per_domain; ++i) tokens.push_back(base + i);
    // Per-domain rank order: even fully shared vocabularies get distinct
    // frequency profiles.
    Rng rank_rng(derive_seed(spec.seed, "ranks/" + std::to_string(d)));
    rank_rng.shuffle(tokens);
    out.domain_token_sets.push_back(tokens);
    models.emplace_back(std::move(tokens), spec.zipf_exponent);
  }

  auto build_domain = [&](const std::string& id, const std::string& source,
                          const std::vector<const UnigramModel*>& ms,
                          const std::vector<double>& ws) {
    DomainCorpus d;
    d.domain_id = id;
    d.source = source;
    std::set<TokenSeq> seen;
    for (const auto& split : kSplitNames) {
      Rng rng(derive_seed(spec.seed, id + "/" + split));
      d.splits[split] = make_split(ms, ws, spec.tokens_per_split.at(split), rng, seen);
    }
    check_split_nonempty(d);
    return d;
  };

  for (int d = 0; d < spec.n_domains; ++d) {
    const std::string id = "dom" + zero_pad(d, 2);
    out.training_domain_ids.push_back(id);
    out.domains.push_back(build_domain(id, "synthetic", {&models[d]}, {1.0}));
  }

  // General-language corpus over the shared pool: pretraining material for
  // the base model that carries no domain-exclusive tokens.
  if (shared >= 8) {
    std::vector<int> tokens = shared_tokens;
    Rng rank_rng(derive_seed(spec.seed, "ranks/general"));
    rank_rng.shuffle(tokens);
    UnigramModel general(std::move(tokens), spec.zipf_exponent);
    out.domains.push_back(build_domain("general", "synthetic-shared", {&general}, {1.0}));
  }

  for (const auto& mix : spec.mixtures) {
    if (mix.domain_id == "general")
      throw ConfigError("synthetic spec: 'general' is reserved for the shared-pool corpus");
    if (mix.components.empty() || mix.components.size() != mix.weights.size())
      throw ConfigError("synthetic spec: mixture '" + mix.domain_id + "' is malformed");
    std::vector<const UnigramModel*> ms;
    for (int c : mix.components) {
      if (c < 0 || c >= spec.n_domains)
        throw ConfigError("synthetic spec: mixture '" + mix.domain_id +
                          "' references an unknown component");
      ms.push_back(&models[c]);
    }
    for (double w : mix.weights)
      if (w <= 0.0) throw ConfigError("synthetic spec: mixture weights must be positive");
    out.domains.push_back(build_domain(mix.domain_id, "mixture", ms, mix.weights));
  }
  return out;
}

CorpusSet ingest_external(const std::map<std::string, std::filesystem::path>& files,
                          int vocab_budget, const std::vector<std::string>& eval_domain_ids) {
  if (files.empty()) throw ConfigError("ingest: no domain files given");
  if (vocab_budget <= Vocab::kReserved) throw ConfigError("ingest: vocab budget too small");

  std::map<std::string, std::array<std::vector<std::string>, 3>> lines_by_domain;
  std::map<std::string, std::int64_t> word_counts;
  for (const auto& [id, path] : files) {
    std::ifstream in(path);
    if (!in) throw DataError("ingest: cannot open " + path.string());
    std::string line;
    auto& buckets = lines_by_domain[id];
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const int slot = static_cast<int>(fnv1a(line) % 10);
      const int bucket = slot < 8 ? 0 : (slot == 8 ? 1 : 2);
      buckets[bucket].push_back(line);
      if (bucket == 0) {
        std::istringstream words(line);
        std::string w;
        while (words >> w) ++word_counts[w];
      }
    }
  }

  std::vector<std::pair<std::string, std::int64_t>> ranked(word_counts.begin(), word_counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });

  CorpusSet out;
  out.vocab = Vocab::with_reserved();
  for (const auto& [word, count] : ranked) {
    if (out.vocab.size() >= vocab_budget) break;
    out.vocab.add(word);
  }

  for (const auto& [id, path] : files) {
    DomainCorpus d;
    d.domain_id = id;
    d.source = path.string();
    const auto& buckets = lines_by_domain[id];
    for (int b = 0; b < 3; ++b) {
      auto& split = d.splits[kSplitNames[b]];
      for (const auto& line : buckets[b]) split.push_back(tokenize(line, out.vocab));
    }
    check_split_nonempty(d);
    const bool is_eval = std::find(eval_domain_ids.begin(), eval_domain_ids.end(), id) !=
                         eval_domain_ids.end();
    if (!is_eval) out.training_domain_ids.push_back(id);
    out.domains.push_back(std::move(d));
  }
  return out;
}

TokenSeq tokenize(const std::string& text, const Vocab& vocab) {
  TokenSeq out;
  out.push_back(Vocab::kBos);
  std::istringstream words(text);
  std::string w;
  while (words >> w) out.push_back(vocab.lookup(w));
  return out;
}

std::string detokenize(const TokenSeq& ids, const Vocab& vocab) {
  std::string out;
  for (int id : ids) {
    if (id == Vocab::kBos || id == Vocab::kPad) continue;
    if (id < 0 || id >= vocab.size()) throw IndexError("detokenize: id out of range");
    if (!out.empty()) out += ' ';
    out += vocab.id_to_token[id];
  }
  return out;
}

std::vector<TokenSeq> sample_sequences(const DomainCorpus& corpus, const std::string& split, int n,
                                       int len, std::uint64_t seed) {
  const auto& pool = corpus.split(split);
  if (n < 0 || len < 1) throw ArgumentError("sample_sequences: n and len must be non-negative");
  std::vector<TokenSeq> out;
  if (n == 0) return out;
  Rng rng(derive_seed(seed, corpus.domain_id + "/" + split + "/sample"));
  std::vector<std::size_t> order(pool.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  // Without replacement while the pool lasts, then with replacement.
  for (int i = 0; i < n; ++i) {
    const std::size_t idx = i < static_cast<int>(pool.size())
                                ? order[i]
                                : static_cast<std::size_t>(rng.next_below(pool.size()));
    TokenSeq seq = pool[idx];
    if (static_cast<int>(seq.size()) > len) seq.resize(len);
    out.push_back(std::move(seq));
  }
  return out;
}

double type_overlap(const DomainCorpus& a, const DomainCorpus& b, const std::string& split) {
  auto types = [&](const DomainCorpus& d) {
    std::set<int> s;
    for (const auto& seq : d.split(split))
      for (int id : seq)
        if (id >= Vocab::kReserved) s.insert(id);
    return s;
  };
  const std::set<int> ta = types(a), tb = types(b);
  std::size_t inter = 0;
  for (int id : ta) inter += tb.count(id);
  const std::size_t uni = ta.size() + tb.size() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

void save_corpus(const std::filesystem::path& dir, const CorpusSet& corpus) {
  std::filesystem::create_directories(dir);
  json vocab_json = json::object();
  for (int i = 0; i < corpus.vocab.size(); ++i) vocab_json[corpus.vocab.id_to_token[i]] = i;
  {
    std::ofstream f(dir / "vocab.json", std::ios::trunc);
    if (!f) throw DataError("corpus: cannot write " + (dir / "vocab.json").string());
    f << vocab_json.dump(2) << "\n";
  }
  json meta;
  meta["vocab_size"] = corpus.vocab.size();
  meta["training_domains"] = corpus.training_domain_ids;
  json dom_list = json::array();
  for (const auto& d : corpus.domains) dom_list.push_back({{"id", d.domain_id}, {"source", d.source}});
  meta["domains"] = dom_list;
  {
    std::ofstream f(dir / "corpus.json", std::ios::trunc);
    f << meta.dump(2) << "\n";
  }
  for (const auto& d : corpus.domains) {
    const auto ddir = dir / d.domain_id;
    std::filesystem::create_directories(ddir);
    for (const auto& [split, seqs] : d.splits) {
      std::ofstream f(ddir / (split + ".tokens"), std::ios::trunc);
      if (!f) throw DataError("corpus: cannot write split file for " + d.domain_id);
      for (const auto& seq : seqs) {
        for (std::size_t i = 0; i < seq.size(); ++i) {
          if (i) f << ' ';
          f << seq[i];
        }
        f << '\n';
      }
    }
  }
}

CorpusSet load_corpus(const std::filesystem::path& dir) {
  std::ifstream vf(dir / "vocab.json");
  if (!vf) throw SetupError("corpus: missing " + (dir / "vocab.json").string());
  json vocab_json;
  try {
    vf >> vocab_json;
  } catch (const json::exception& e) {
    throw ParseError("corpus: malformed vocab.json: " + std::string(e.what()));
  }
  CorpusSet out;
  std::vector<std::string> by_id(vocab_json.size());
  for (auto it = vocab_json.begin(); it != vocab_json.end(); ++it) {
    const int id = it.value().get<int>();
    if (id < 0 || id >= static_cast<int>(by_id.size()))
      throw ParseError("corpus: vocab ids are not contiguous");
    by_id[id] = it.key();
  }
  for (const auto& tok : by_id) out.vocab.add(tok);

  std::ifstream mf(dir / "corpus.json");
  if (!mf) throw SetupError("corpus: missing " + (dir / "corpus.json").string());
  json meta;
  try {
    mf >> meta;
    out.training_domain_ids = meta.at("training_domains").get<std::vector<std::string>>();
    for (const auto& dj : meta.at("domains")) {
      DomainCorpus d;
      d.domain_id = dj.at("id").get<std::string>();
      d.source = dj.at("source").get<std::string>();
      for (const auto& split : kSplitNames) {
        std::ifstream f(dir / d.domain_id / (split + ".tokens"));
        if (!f)
          throw SetupError("corpus: missing split file for domain '" + d.domain_id + "'");
        std::string line;
        long line_no = 0;
        auto& seqs = d.splits[split];
        while (std::getline(f, line)) {
          ++line_no;
          if (line.empty()) continue;
          TokenSeq seq;
          std::istringstream ss(line);
          long long v;
          while (ss >> v) {
            if (v < 0 || v >= out.vocab.size())
              throw ParseError("corpus: token id out of range in " + d.domain_id + "/" + split,
                               line_no);
            seq.push_back(static_cast<int>(v));
          }
          if (!ss.eof()) throw ParseError("corpus: malformed token line in " + d.domain_id, line_no);
          seqs.push_back(std::move(seq));
        }
      }
      check_split_nonempty(d);
      out.domains.push_back(std::move(d));
    }
  } catch (const json::exception& e) {
    throw ParseError("corpus: malformed corpus.json: " + std::string(e.what()));
  }
  return out;
}

}  // namespace modcomp
