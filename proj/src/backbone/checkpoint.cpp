// Copyright (C) 2026 The causalvid authors
// SPDX-License-Identifier: Apache-2.0

#include "causalvid/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "causalvid/error.hpp"

namespace cvs {

namespace {

constexpr char kMagic[8] = {'C', 'V', 'S', 'C', 'K', 'P', 'T', '\0'};

template <class T>
void put_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get_pod(std::istream& in, const std::string& what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  require(static_cast<bool>(in), ErrorKind::Malformed, "checkpoint truncated while reading " + what);
  return v;
}

}  // namespace

const NamedArray* Checkpoint::find(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return &a;
  return nullptr;
}

void Checkpoint::put(NamedArray array) {
  for (auto& a : arrays)
    if (a.name == array.name) {
      a = std::move(array);
      return;
    }
  arrays.push_back(std::move(array));
}

std::size_t Checkpoint::erase_prefixes(const std::vector<std::string>& prefixes) {
  const auto before = arrays.size();
  std::erase_if(arrays, [&](const NamedArray& a) {
    return std::any_of(prefixes.begin(), prefixes.end(),
                       [&](const std::string& p) { return a.name.rfind(p, 0) == 0; });
  });
  return before - arrays.size();
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorKind::Io, "cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof kMagic);
    put_pod(out, kCheckpointVersion);
    const std::string meta = ckpt.meta.dump();
    put_pod(out, static_cast<std::uint64_t>(meta.size()));
    out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    put_pod(out, static_cast<std::uint64_t>(ckpt.arrays.size()));
    for (const auto& a : ckpt.arrays) {
      require(ag::numel(a.shape) == static_cast<std::int64_t>(a.data.size()), ErrorKind::Contract,
              "checkpoint array " + a.name + " has inconsistent shape");
      put_pod(out, static_cast<std::uint32_t>(a.name.size()));
      out.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
      put_pod(out, static_cast<std::uint32_t>(a.shape.size()));
      for (auto d : a.shape) put_pod(out, static_cast<std::int64_t>(d));
      out.write(reinterpret_cast<const char*>(a.data.data()),
                static_cast<std::streamsize>(a.data.size() * sizeof(double)));
    }
    require(out.good(), ErrorKind::Io, "short write on checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  require(std::filesystem::exists(path), ErrorKind::MissingFile,
          "checkpoint not found: " + path.string());
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::Io, "cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  require(in && std::memcmp(magic, kMagic, sizeof magic) == 0, ErrorKind::Malformed,
          path.string() + " is not a checkpoint");
  const auto version = get_pod<std::uint32_t>(in, "version");
  require(version == kCheckpointVersion, ErrorKind::Malformed,
          "unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  const auto meta_len = get_pod<std::uint64_t>(in, "metadata length");
  require(meta_len < (1ULL << 30), ErrorKind::Malformed, "implausible metadata length");
  std::string meta(meta_len, '\0');
  in.read(meta.data(), static_cast<std::streamsize>(meta_len));
  require(static_cast<bool>(in), ErrorKind::Malformed, "checkpoint truncated in metadata");
  try {
    ckpt.meta = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorKind::Malformed, std::string("checkpoint metadata: ") + e.what());
  }
  const auto count = get_pod<std::uint64_t>(in, "array count");
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedArray a;
    const auto name_len = get_pod<std::uint32_t>(in, "name length");
    require(name_len < 4096, ErrorKind::Malformed, "implausible array name length");
    a.name.resize(name_len);
    in.read(a.name.data(), name_len);
    const auto ndim = get_pod<std::uint32_t>(in, "rank");
    require(ndim <= 8, ErrorKind::Malformed, "implausible rank for " + a.name);
    for (std::uint32_t d = 0; d < ndim; ++d) {
      const auto v = get_pod<std::int64_t>(in, "shape");
      require(v >= 0, ErrorKind::Malformed, "negative dimension in " + a.name);
      a.shape.push_back(v);
    }
    const auto n = ag::numel(a.shape);
    require(n < (1LL << 32), ErrorKind::Malformed, "implausible size for " + a.name);
    a.data.resize(static_cast<std::size_t>(n));
    in.read(reinterpret_cast<char*>(a.data.data()), static_cast<std::streamsize>(n * 8));
    require(static_cast<bool>(in), ErrorKind::Malformed, "checkpoint truncated in " + a.name);
    ckpt.arrays.push_back(std::move(a));
  }
  return ckpt;
}

void export_parameters(const nn::ParameterStore& store, Checkpoint& ckpt,
                       const std::string& prefix) {
  for (const auto& [name, t] : store.items())
    ckpt.put({prefix + name, t.shape(), t.values()});
}

std::size_t import_parameters(nn::ParameterStore& store, const Checkpoint& ckpt,
                              const std::string& prefix, bool require_all) {
  std::size_t loaded = 0;
  for (const auto& [name, t] : store.items()) {
    const auto* a = ckpt.find(prefix + name);
    if (!a) {
      require(!require_all, ErrorKind::Malformed, "checkpoint lacks parameter " + prefix + name);
      continue;
    }
    require(a->shape == t.shape(), ErrorKind::Contract,
            "parameter " + prefix + name + ": checkpoint shape " + ag::shape_str(a->shape) +
                " vs model " + ag::shape_str(t.shape()));
    auto leaf = t;
    auto dst = leaf.mutable_data();
    std::copy(a->data.begin(), a->data.end(), dst.begin());
    ++loaded;
  }
  return loaded;
}

}  // namespace cvs
