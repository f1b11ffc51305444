#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "modcomp/tensor.hpp"

namespace modcomp {

// Ordered name -> tensor map. Holds the frozen base parameters, per-domain
// adapter parameters, and composed (averaged) results. Map order defines the
// checkpoint manifest order.
template <class R>
struct ParamTreeT {
  std::map<std::string, TensorT<R>> entries;

  bool contains(const std::string& name) const { return entries.count(name) != 0; }

  TensorT<R>& at(const std::string& name) {
    auto it = entries.find(name);
    if (it == entries.end()) throw StructureError("param tree: missing entry '" + name + "'");
    return it->second;
  }
  const TensorT<R>& at(const std::string& name) const {
    auto it = entries.find(name);
    if (it == entries.end()) throw StructureError("param tree: missing entry '" + name + "'");
    return it->second;
  }

  std::size_t size() const { return entries.size(); }

  std::int64_t numel() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : entries) n += t.numel();
    return n;
  }

  void enable_grads() {
    for (auto& [name, t] : entries) t.enable_grad();
  }
  void drop_grads() {
    for (auto& [name, t] : entries) t.drop_grad();
  }
  void zero_grads() {
    for (auto& [name, t] : entries) t.zero_grad();
  }

  ParamTreeT clone(bool requires_grad = false) const {
    ParamTreeT out;
    for (const auto& [name, t] : entries) out.entries.emplace(name, t.clone(requires_grad));
    return out;
  }
};

using ParamTree = ParamTreeT<float>;

// Throws StructureError naming the first offending entry.
template <class R, class S>
void check_same_structure(const ParamTreeT<R>& a, const ParamTreeT<S>& b) {
  for (const auto& [name, t] : a.entries) {
    auto it = b.entries.find(name);
    if (it == b.entries.end()) throw StructureError("param tree: missing entry '" + name + "'");
    if (it->second.shape != t.shape)
      throw StructureError("param tree: shape mismatch for entry '" + name + "'");
  }
  for (const auto& [name, t] : b.entries)
    if (!a.entries.count(name)) throw StructureError("param tree: unexpected entry '" + name + "'");
}

inline ParamTreeT<double> to_double(const ParamTree& tree) {
  ParamTreeT<double> out;
  for (const auto& [name, t] : tree.entries) {
    std::vector<double> v(t.data->begin(), t.data->end());
    out.entries.emplace(name, TensorT<double>::from_values(t.shape, std::move(v)));
  }
  return out;
}

// Tree whose data buffers alias the gradient buffers of `tree`.
template <class R>
ParamTreeT<R> grads_of(const ParamTreeT<R>& tree) {
  ParamTreeT<R> out;
  for (const auto& [name, t] : tree.entries) {
    if (!t.requires_grad()) throw StructureError("grads_of: entry '" + name + "' has no gradient");
    TensorT<R> g;
    g.shape = t.shape;
    g.data = t.grad;
    out.entries.emplace(name, std::move(g));
  }
  return out;
}

// Copies data from source into target; both must share structure.
template <class R>
void load_params(ParamTreeT<R>& target, const ParamTreeT<R>& source) {
  check_same_structure(target, source);
  for (auto& [name, t] : target.entries) *t.data = *source.at(name).data;
}

// Checkpoint directory format: manifest.json (entry names, shapes, byte
// offsets) plus params.bin (raw little-endian f32 in manifest order).
void save_checkpoint(const std::filesystem::path& dir, const ParamTree& tree);
ParamTree load_checkpoint(const std::filesystem::path& dir);

}  // namespace modcomp
