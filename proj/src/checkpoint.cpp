#include "odp/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include "odp/errors.hpp"

namespace odp {

namespace {

constexpr char kMagic[5] = {'O', 'D', 'C', 'K', '1'};

void put_u32(std::string& out, uint32_t v) { out.append(reinterpret_cast<char*>(&v), 4); }
void put_u64(std::string& out, uint64_t v) { out.append(reinterpret_cast<char*>(&v), 8); }

void put_array(std::string& out, const std::string& name, const double* data, size_t n) {
  put_u32(out, static_cast<uint32_t>(name.size()));
  out.append(name);
  put_u64(out, static_cast<uint64_t>(n));
  out.append(reinterpret_cast<const char*>(data), n * 8);
}

struct ArrayMap {
  std::map<std::string, Vec> arrays;
  const std::string* path = nullptr;

  bool has(const std::string& name) const { return arrays.count(name) > 0; }

  const Vec& get(const std::string& name) const {
    auto it = arrays.find(name);
    if (it == arrays.end())
      throw IoError("checkpoint missing array '" + name + "': " + *path);
    return it->second;
  }

  void load_into(Parameter& p) const {
    const Vec& v = get(p.name);
    if (v.size() != p.value.size())
      throw IoError("checkpoint array '" + p.name + "' has " + std::to_string(v.size()) +
                    " values, expected " + std::to_string(p.value.size()) + ": " + *path);
    std::memcpy(p.value.data(), v.data(), static_cast<size_t>(v.size()) * 8);
  }
};

Vec normalizer_pack(const Normalizer& n) {
  Vec v(2 * n.dims() + 1);
  v(0) = n.mode() == Normalizer::Mode::to_sym ? 1.0 : 0.0;
  v.segment(1, n.dims()) = n.min();
  v.segment(1 + n.dims(), n.dims()) = n.max();
  return v;
}

Normalizer normalizer_unpack(const Vec& v) {
  const Index d = (v.size() - 1) / 2;
  return Normalizer(v.segment(1, d), v.segment(1 + d, d),
                    v(0) != 0.0 ? Normalizer::Mode::to_sym : Normalizer::Mode::to_unit);
}

}  // namespace

void Checkpoint::save(const std::string& path) const {
  std::string payload;
  put_u32(payload, kVersion);

  const std::string cfg_text = config.serialize();
  put_u64(payload, cfg_text.size());
  payload.append(cfg_text);

  std::vector<std::pair<std::string, Vec>> arrays;
  auto add = [&](const std::string& name, Vec v) { arrays.emplace_back(name, std::move(v)); };
  auto add_params = [&](std::vector<Parameter*> ps) {
    for (Parameter* p : ps) {
      Vec flat(p->value.size());
      std::memcpy(flat.data(), p->value.data(), static_cast<size_t>(flat.size()) * 8);
      add(p->name, std::move(flat));
    }
  };

  if (sa_norm.fitted()) add("norm.sa", normalizer_pack(sa_norm));
  {
    Vec rs(3);
    rs << ret_stats.rmin, ret_stats.rmax, ret_stats.gamma;
    add("stats.return", rs);
  }
  if (classifier) {
    add_params(const_cast<DynamicsClassifier&>(*classifier).net.parameters());
    add("norm.cls", normalizer_pack(cls_out_norm));
  }
  if (inverse) {
    add_params(const_cast<InverseModel&>(*inverse).net.parameters());
    add("norm.ierr", normalizer_pack(inv_err_norm));
  }
  if (denoiser) {
    add_params(const_cast<Denoiser&>(*denoiser).parameters());
    add("schedule.alpha", schedule.alpha);
    add("schedule.alpha_bar", schedule.alpha_bar);
  }

  put_u32(payload, static_cast<uint32_t>(arrays.size()));
  for (const auto& [name, v] : arrays)
    put_array(payload, name, v.data(), static_cast<size_t>(v.size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.write(kMagic, 5);
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  const uint64_t checksum = fnv1a(payload.data(), payload.size());
  out.write(reinterpret_cast<const char*>(&checksum), 8);
  if (!out) throw IoError("write failure: " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (bytes.size() < 5 + 4 + 8 || std::memcmp(bytes.data(), kMagic, 5) != 0)
    throw IoError("corrupt checkpoint (bad magic): " + path);
  const size_t payload_end = bytes.size() - 8;
  uint64_t stored;
  std::memcpy(&stored, bytes.data() + payload_end, 8);
  if (fnv1a(bytes.data() + 5, payload_end - 5) != stored)
    throw IoError("corrupt checkpoint (checksum mismatch): " + path);

  size_t at = 5;
  auto need = [&](size_t n) {
    if (at + n > payload_end) throw IoError("corrupt checkpoint (truncated): " + path);
  };
  auto get_u32 = [&] {
    need(4);
    uint32_t v;
    std::memcpy(&v, bytes.data() + at, 4);
    at += 4;
    return v;
  };
  auto get_u64 = [&] {
    need(8);
    uint64_t v;
    std::memcpy(&v, bytes.data() + at, 8);
    at += 8;
    return v;
  };

  const uint32_t version = get_u32();
  if (version != kVersion)
    throw IoError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                  std::to_string(kVersion) + "): " + path);

  const uint64_t cfg_len = get_u64();
  need(cfg_len);
  const std::string cfg_text = bytes.substr(at, cfg_len);
  at += cfg_len;

  ArrayMap map;
  map.path = &path;
  const uint32_t n_arrays = get_u32();
  for (uint32_t i = 0; i < n_arrays; ++i) {
    const uint32_t name_len = get_u32();
    need(name_len);
    const std::string name = bytes.substr(at, name_len);
    at += name_len;
    const uint64_t count = get_u64();
    need(count * 8);
    Vec v(static_cast<Index>(count));
    std::memcpy(v.data(), bytes.data() + at, count * 8);
    at += count * 8;
    map.arrays.emplace(name, std::move(v));
  }

  Checkpoint ck;
  ck.config = RunConfig::from_text(cfg_text);
  if (map.has("norm.sa")) ck.sa_norm = normalizer_unpack(map.get("norm.sa"));
  {
    const Vec& rs = map.get("stats.return");
    ck.ret_stats = {rs(0), rs(1), rs(2)};
  }

  Rng dummy(0);
  if (map.has("classifier.l0.w")) {
    ck.classifier = DynamicsClassifier(dummy);
    for (Parameter* p : ck.classifier->net.parameters()) map.load_into(*p);
    ck.cls_out_norm = normalizer_unpack(map.get("norm.cls"));
  }
  if (map.has("inverse.l0.w")) {
    ck.inverse = InverseModel(dummy);
    for (Parameter* p : ck.inverse->net.parameters()) map.load_into(*p);
    ck.inv_err_norm = normalizer_unpack(map.get("norm.ierr"));
  }
  if (map.has("denoiser.in.w")) {
    DenoiserConfig dcfg;
    dcfg.horizon = ck.config.horizon;
    dcfg.width = ck.config.width;
    dcfg.blocks = ck.config.blocks;
    dcfg.time_dim = ck.config.time_dim;
    dcfg.ctx_dim = ck.config.ctx_dim;
    ck.denoiser = Denoiser(dcfg, dummy);
    for (Parameter* p : ck.denoiser->parameters()) map.load_into(*p);
    ck.schedule.alpha = map.get("schedule.alpha");
    ck.schedule.alpha_bar = map.get("schedule.alpha_bar");
    ck.schedule.K = static_cast<int>(ck.schedule.alpha.size());
  }
  return ck;
}

ContextModels Checkpoint::context_models() {
  if (!classifier || !inverse)
    throw StageOrderError(
        "checkpoint lacks a fitted classifier or inverse model; run train-classifier and "
        "train-inverse first");
  ContextModels m;
  m.classifier = &*classifier;
  m.cls_norm = &cls_out_norm;
  m.inverse = &*inverse;
  m.err_norm = &inv_err_norm;
  m.ret_stats = &ret_stats;
  m.score = ScoreConfig(config.epsilon);
  return m;
}

}  // namespace odp
