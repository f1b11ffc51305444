#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "modcomp/model.hpp"

using namespace modcomp;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.d_model = 16;
  cfg.n_heads = 4;
  cfg.vocab_size = 23;
  cfg.max_seq_len = 12;
  cfg.reduction_factor = 12;
  return cfg;
}

}  // namespace

TEST_CASE("init_base is deterministic per seed") {
  ModelConfig cfg = small_config();
  BaseModel a = init_base(cfg, 7);
  BaseModel b = init_base(cfg, 7);
  BaseModel c = init_base(cfg, 8);
  bool all_equal = true, any_diff = false;
  for (const auto& [name, t] : a.phi.entries) {
    all_equal = all_equal && (*t.data == *b.phi.at(name).data);
    any_diff = any_diff || (*t.data != *c.phi.at(name).data);
  }
  CHECK(all_equal);
  CHECK(any_diff);
}

TEST_CASE("bottleneck and config guards") {
  ModelConfig cfg;
  cfg.d_model = 64;
  cfg.reduction_factor = 12;
  CHECK(cfg.bottleneck() == 6);  // ceil(64/12)

  ModelConfig bad = small_config();
  bad.n_heads = 5;  // does not divide 16
  CHECK_THROWS_AS(init_base(bad, 1), ConfigError);
}

TEST_CASE("zero-initialized adapter is the identity map") {
  BaseModel base = init_base(small_config(), 21);
  AdapterModule adapter = init_adapter(base, "zero");
  std::vector<int> tokens = {2, 5, 9, 14, 3};
  Tensor plain = forward(base, nullptr, tokens);
  Tensor adapted = forward(base, &adapter, tokens);
  REQUIRE(plain.numel() == adapted.numel());
  float max_diff = 0.0f;
  for (std::int64_t i = 0; i < plain.numel(); ++i)
    max_diff = std::max(max_diff, std::fabs(plain.at(i) - adapted.at(i)));
  CHECK(max_diff == 0.0f);
}

TEST_CASE("logits shape, finiteness, and length guard") {
  BaseModel base = init_base(small_config(), 3);
  std::vector<int> tokens = {2, 1, 4, 4, 7, 19};
  Tensor logits = forward(base, nullptr, tokens);
  CHECK(logits.shape == std::vector<int>{6, 23});
  for (std::int64_t i = 0; i < logits.numel(); ++i) CHECK(std::isfinite(logits.at(i)));

  std::vector<int> too_long(base.config.max_seq_len + 1, 2);
  CHECK_THROWS_AS(forward(base, nullptr, too_long), LengthError);
}

TEST_CASE("causality: perturbing a token leaves earlier logits unchanged") {
  BaseModel base = init_base(small_config(), 11);
  std::vector<int> tokens = {2, 5, 9, 14, 3, 8, 17};
  Tensor before = forward(base, nullptr, tokens);
  const int t = 4;
  tokens[t] = 21;
  Tensor after = forward(base, nullptr, tokens);
  const int v = base.config.vocab_size;
  for (int pos = 0; pos < t; ++pos)
    for (int j = 0; j < v; ++j)
      CHECK(before.at(static_cast<std::size_t>(pos) * v + j) ==
            after.at(static_cast<std::size_t>(pos) * v + j));
  bool later_changed = false;
  for (int j = 0; j < v; ++j)
    later_changed = later_changed ||
                    before.at(static_cast<std::size_t>(t) * v + j) !=
                        after.at(static_cast<std::size_t>(t) * v + j);
  CHECK(later_changed);
}

TEST_CASE("adapter tree has n_layers*4 entries plus the head pair") {
  ModelConfig cfg = small_config();
  BaseModel base = init_base(cfg, 2);
  AdapterModule adapter = init_adapter(base, "count");
  CHECK(adapter.theta.size() == static_cast<std::size_t>(cfg.n_layers * 4 + 2));
  CHECK(adapter_param_names(cfg).size() == adapter.theta.size());

  ModelConfig tied = cfg;
  tied.tie_head = true;
  BaseModel tied_base = init_base(tied, 2);
  AdapterModule tied_adapter = init_adapter(tied_base, "tied");
  CHECK(tied_adapter.theta.size() == static_cast<std::size_t>(cfg.n_layers * 4));
  // tied head: logits come from the embedding table
  std::vector<int> tokens = {2, 5, 9};
  Tensor logits = forward(tied_base, &tied_adapter, tokens);
  CHECK(logits.shape == std::vector<int>{3, 23});
}

TEST_CASE("checkpoint save/load round-trip is bit-exact") {
  BaseModel base = init_base(small_config(), 31);
  const auto dir = std::filesystem::temp_directory_path() / "modcomp_ckpt_test";
  std::filesystem::remove_all(dir);
  save_checkpoint(dir, base.phi);
  ParamTree loaded = load_checkpoint(dir);
  REQUIRE(loaded.size() == base.phi.size());
  for (const auto& [name, t] : base.phi.entries) {
    CHECK(loaded.at(name).shape == t.shape);
    CHECK(*loaded.at(name).data == *t.data);
  }
  // save the loaded tree again: identical bytes
  const auto dir2 = std::filesystem::temp_directory_path() / "modcomp_ckpt_test2";
  std::filesystem::remove_all(dir2);
  save_checkpoint(dir2, loaded);
  auto read_bytes = [](const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  };
  CHECK(read_bytes(dir / "params.bin") == read_bytes(dir2 / "params.bin"));
  CHECK(read_bytes(dir / "manifest.json") == read_bytes(dir2 / "manifest.json"));
  std::filesystem::remove_all(dir);
  std::filesystem::remove_all(dir2);
}

TEST_CASE("load_params rejects structural mismatches by name") {
  BaseModel base = init_base(small_config(), 1);
  ParamTree incomplete = base.phi.clone();
  incomplete.entries.erase("head.b");
  try {
    load_params(incomplete, base.phi);
    FAIL("expected StructureError");
  } catch (const StructureError& e) {
    CHECK(std::string(e.what()).find("head.b") != std::string::npos);
  }
}
