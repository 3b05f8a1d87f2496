#include "damnet/model.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace damnet {

namespace {

constexpr char kMagic[8] = {'D', 'A', 'M', 'N', 'E', 'T', '0', '1'};

void write_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw std::invalid_argument("checkpoint: truncated file");
  return v;
}

void write_string(std::ostream& out, const std::string& s) {
  write_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
  std::uint64_t n = read_u64(in);
  if (n > (1ull << 32)) throw std::invalid_argument("checkpoint: implausible string length");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw std::invalid_argument("checkpoint: truncated file");
  return s;
}

void write_tensor(std::ostream& out, const Tensor& t) {
  write_u64(out, static_cast<std::uint64_t>(t.ndim()));
  for (i64 i = 0; i < t.ndim(); ++i) write_u64(out, static_cast<std::uint64_t>(t.dim(i)));
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(double)));
}

Tensor read_tensor(std::istream& in) {
  std::uint64_t nd = read_u64(in);
  if (nd > 8) throw std::invalid_argument("checkpoint: implausible tensor rank");
  Shape shape(nd);
  for (auto& d : shape) d = static_cast<i64>(read_u64(in));
  Tensor t(shape);
  in.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(t.numel() * sizeof(double)));
  if (!in) throw std::invalid_argument("checkpoint: truncated tensor payload");
  return t;
}

}  // namespace

DamNet::DamNet(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(cfg_.seed);
  backbone_ = std::make_unique<Backbone>(ps_, cfg_, rng);
  head_ = std::make_unique<TdfHead>(ps_, cfg_, rng);
}

Var DamNet::forward(const Var& pre, const Var& post, const Ctx& ctx) const {
  return forward_full(pre, post, ctx).prob;
}

TdfHead::Out DamNet::forward_full(const Var& pre, const Var& post, const Ctx& ctx) const {
  return head_->forward(backbone_->forward(pre, post, ctx), ctx);
}

void DamNet::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::invalid_argument("checkpoint: cannot write " + path);
  out.write(kMagic, sizeof kMagic);
  KvFile kv;
  cfg_.emit(kv);
  write_string(out, kv.to_string());
  write_u64(out, ps_.params().size());
  for (const auto& e : ps_.params()) {
    write_string(out, e.name);
    write_tensor(out, e.var->value);
  }
  write_u64(out, ps_.buffers().size());
  for (const auto& [name, t] : ps_.buffers()) {
    write_string(out, name);
    write_tensor(out, t);
  }
  if (!out) throw std::invalid_argument("checkpoint: write failure on " + path);
}

DamNet DamNet::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw std::invalid_argument("checkpoint: bad magic in " + path);
  KvFile kv = KvFile::parse(read_string(in));
  ModelConfig cfg;
  cfg.apply(kv);
  DamNet model(cfg);

  std::uint64_t n_params = read_u64(in);
  if (n_params != model.ps_.params().size())
    throw std::invalid_argument("checkpoint: holds " + std::to_string(n_params) +
                                " parameters, model needs " +
                                std::to_string(model.ps_.params().size()));
  for (std::uint64_t i = 0; i < n_params; ++i) {
    std::string name = read_string(in);
    Tensor t = read_tensor(in);
    const ParamStore::Entry* e = model.ps_.find(name);
    if (!e) throw std::invalid_argument("checkpoint: unknown parameter " + name);
    if (!e->var->value.same_shape(t))
      throw std::invalid_argument("checkpoint: parameter " + name + " has shape " +
                                  t.shape_str() + ", expected " + e->var->value.shape_str());
    e->var->value = std::move(t);
  }
  std::uint64_t n_buffers = read_u64(in);
  if (n_buffers != model.ps_.buffers().size())
    throw std::invalid_argument("checkpoint: buffer count mismatch");
  for (std::uint64_t i = 0; i < n_buffers; ++i) {
    std::string name = read_string(in);
    Tensor t = read_tensor(in);
    bool found = false;
    for (auto& [bname, buf] : model.ps_.buffers())
      if (bname == name) {
        if (!buf.same_shape(t))
          throw std::invalid_argument("checkpoint: buffer " + name + " shape mismatch");
        buf = std::move(t);
        found = true;
        break;
      }
    if (!found) throw std::invalid_argument("checkpoint: unknown buffer " + name);
  }
  return model;
}

}  // namespace damnet
