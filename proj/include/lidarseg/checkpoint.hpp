#ifndef LIDARSEG_CHECKPOINT_HPP
#define LIDARSEG_CHECKPOINT_HPP

// Checkpoint container: versioned textual header with ordered metadata and a
// tensor manifest (name, shape), then the raw little-endian scalar payload in
// manifest order. Model parameters, batch-norm running statistics and Adam
// moments all travel through the same manifest.

#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "lidarseg/error.hpp"
#include "lidarseg/params.hpp"

namespace lidarseg {

struct CheckpointMeta {
  std::vector<std::pair<std::string, std::string>> items;  // ordered

  void set(const std::string& key, const std::string& value) {
    for (auto& kv : items) {
      if (kv.first == key) {
        kv.second = value;
        return;
      }
    }
    items.emplace_back(key, value);
  }

  const std::string* get(const std::string& key) const {
    for (const auto& kv : items)
      if (kv.first == key) return &kv.second;
    return nullptr;
  }

  std::string require(const std::string& key) const {
    const std::string* v = get(key);
    if (!v) throw Error(ErrorCode::InvalidArgument, "checkpoint lacks meta key '" + key + "'");
    return *v;
  }
};

template <class S>
struct NamedArray {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<S> data;
};

template <class S>
void write_checkpoint(const std::string& path, const CheckpointMeta& meta,
                      const std::vector<NamedArray<S>>& arrays) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot open " + path + " for writing");
  out << "LIDARSEG-CKPT 1\n";
  out << "scalar " << (sizeof(S) == 4 ? "f32" : "f64") << "\n";
  for (const auto& kv : meta.items) out << "meta " << kv.first << " " << kv.second << "\n";
  for (const auto& a : arrays) {
    out << "tensor " << a.name;
    for (std::size_t d : a.shape) out << " " << d;
    out << "\n";
  }
  out << "payload\n";
  for (const auto& a : arrays) {
    out.write(reinterpret_cast<const char*>(a.data.data()),
              static_cast<std::streamsize>(a.data.size() * sizeof(S)));
  }
  if (!out) throw Error(ErrorCode::IoFailure, "write failed: " + path);
}

/// Reads only the header; useful to discover the stored precision and configs
/// before instantiating typed models.
CheckpointMeta read_checkpoint_meta(const std::string& path);

template <class S>
std::vector<NamedArray<S>> read_checkpoint(const std::string& path, CheckpointMeta* meta_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != "LIDARSEG-CKPT 1")
    throw Error(ErrorCode::BadMagic, path + " is not a checkpoint");
  std::vector<NamedArray<S>> arrays;
  CheckpointMeta meta;
  std::string scalar;
  while (std::getline(in, line)) {
    if (line == "payload") break;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "scalar") {
      ls >> scalar;
    } else if (tag == "meta") {
      std::string key;
      ls >> key;
      std::string value;
      std::getline(ls, value);
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      meta.set(key, value);
    } else if (tag == "tensor") {
      NamedArray<S> a;
      ls >> a.name;
      std::size_t d;
      while (ls >> d) a.shape.push_back(d);
      arrays.push_back(std::move(a));
    } else {
      throw Error(ErrorCode::BadMagic, "unknown checkpoint line '" + line + "'");
    }
  }
  const std::string expected = sizeof(S) == 4 ? "f32" : "f64";
  if (scalar != expected)
    throw Error(ErrorCode::UnsupportedDtypeOrShape,
                path + " stores " + scalar + " scalars, expected " + expected);
  for (auto& a : arrays) {
    a.data.assign(ad::shape_size(a.shape), S(0));
    in.read(reinterpret_cast<char*>(a.data.data()),
            static_cast<std::streamsize>(a.data.size() * sizeof(S)));
    if (!in) throw Error(ErrorCode::UnsupportedDtypeOrShape, "truncated payload in " + path);
  }
  if (meta_out) *meta_out = meta;
  return arrays;
}

/// Serializes a parameter store plus optional Adam state.
template <class S>
void save_model_checkpoint(const std::string& path, const CheckpointMeta& base_meta,
                           const ParamStore<S>& store, const AdamState<S>* adam) {
  CheckpointMeta meta = base_meta;
  std::vector<NamedArray<S>> arrays;
  for (const auto& e : store.entries())
    arrays.push_back({e.name, e.tensor->shape, e.tensor->value});
  if (adam) {
    meta.set("adam.step", std::to_string(adam->step));
    std::size_t slot = 0;
    for (const auto& e : store.entries()) {
      if (!e.trainable) continue;
      arrays.push_back({"adam.m." + e.name, e.tensor->shape, adam->m[slot]});
      arrays.push_back({"adam.v." + e.name, e.tensor->shape, adam->v[slot]});
      ++slot;
    }
  }
  write_checkpoint(path, meta, arrays);
}

/// Fills an already-built store (and optionally Adam state) from a checkpoint.
template <class S>
void load_model_checkpoint(const std::string& path, ParamStore<S>& store,
                           AdamState<S>* adam, CheckpointMeta* meta_out) {
  CheckpointMeta meta;
  auto arrays = read_checkpoint<S>(path, &meta);
  auto find = [&](const std::string& name) -> const NamedArray<S>* {
    for (const auto& a : arrays)
      if (a.name == name) return &a;
    return nullptr;
  };
  for (const auto& e : store.entries()) {
    const NamedArray<S>* a = find(e.name);
    if (!a) throw Error(ErrorCode::ShapeMismatch, path + " lacks tensor " + e.name);
    if (a->shape != e.tensor->shape)
      throw Error(ErrorCode::ShapeMismatch, "shape mismatch for " + e.name);
    e.tensor->value = a->data;
  }
  if (adam) {
    *adam = AdamState<S>::init(store, adam->cfg);
    const std::string* step = meta.get("adam.step");
    adam->step = step ? std::stoll(*step) : 0;
    std::size_t slot = 0;
    for (const auto& e : store.entries()) {
      if (!e.trainable) continue;
      const NamedArray<S>* m = find("adam.m." + e.name);
      const NamedArray<S>* v = find("adam.v." + e.name);
      if (m && v) {
        adam->m[slot] = m->data;
        adam->v[slot] = v->data;
      }
      ++slot;
    }
  }
  if (meta_out) *meta_out = meta;
}

inline CheckpointMeta read_checkpoint_meta(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != "LIDARSEG-CKPT 1")
    throw Error(ErrorCode::BadMagic, path + " is not a checkpoint");
  CheckpointMeta meta;
  while (std::getline(in, line)) {
    if (line == "payload") break;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "meta") {
      std::string key;
      ls >> key;
      std::string value;
      std::getline(ls, value);
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      meta.set(key, value);
    } else if (tag == "scalar") {
      std::string s;
      ls >> s;
      meta.set("scalar", s);
    }
  }
  return meta;
}

}  // namespace lidarseg

#endif  // LIDARSEG_CHECKPOINT_HPP
