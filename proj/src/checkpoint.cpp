#include "pcodec/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "pcodec/errors.hpp"

namespace pcodec::ckpt {

namespace {

constexpr char kMagic[8] = {'P', 'C', 'C', 'K', 'P', 'T', '0', '1'};

void put_u64(std::string& b, uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(char((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& b, double v) { put_u64(b, std::bit_cast<uint64_t>(v)); }

struct Reader {
  explicit Reader(const std::string& buf) : b(buf) {}

  const std::string& b;
  size_t pos = 0;
  std::string ctx;

  void need(size_t n, const char* what) {
    if (pos + n > b.size())
      throw IntegrityError("checkpoint truncated reading " + std::string(what) +
                           (ctx.empty() ? "" : " of " + ctx));
  }
  uint64_t u64(const char* what) {
    need(8, what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(uint8_t(b[pos + size_t(i)])) << (8 * i);
    pos += 8;
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
  std::string bytes(size_t n, const char* what) {
    need(n, what);
    std::string s = b.substr(pos, n);
    pos += n;
    return s;
  }
};

std::string payload_bytes(const Tensor& t) {
  std::string b;
  b.reserve(t.data.size() * 8);
  for (double v : t.data) put_f64(b, v);
  return b;
}

}  // namespace

bool Container::has(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.first == name) return true;
  return false;
}

const Tensor& Container::array(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.first == name) return a.second;
  throw IntegrityError("checkpoint missing array: " + name);
}

void save(const std::string& path, const Container& c) {
  std::string out(kMagic, sizeof(kMagic));
  const std::string meta = c.meta.dump();
  put_u64(out, meta.size());
  out += meta;
  put_u64(out, c.arrays.size());
  for (const auto& [name, t] : c.arrays) {
    put_u64(out, name.size());
    out += name;
    put_u64(out, t.shape.size());
    for (int64_t d : t.shape) put_u64(out, uint64_t(d));
    const std::string payload = payload_bytes(t);
    put_u64(out, fnv1a64(payload.data(), payload.size()));
    out += payload;
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open checkpoint for writing: " + path);
  f.write(out.data(), std::streamsize(out.size()));
  if (!f) throw IoError("short write to checkpoint: " + path);
}

Container load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  std::string b((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r(b);
  const std::string magic = r.bytes(sizeof(kMagic), "magic");
  if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0)
    throw IntegrityError("checkpoint magic mismatch");
  Container c;
  const uint64_t meta_len = r.u64("metadata length");
  const std::string meta = r.bytes(meta_len, "metadata");
  c.meta = nlohmann::json::parse(meta, nullptr, false);
  if (c.meta.is_discarded()) throw IntegrityError("checkpoint metadata is not valid JSON");
  const uint64_t n = r.u64("array count");
  for (uint64_t i = 0; i < n; ++i) {
    r.ctx = "array " + std::to_string(i);
    const uint64_t name_len = r.u64("name length");
    const std::string name = r.bytes(name_len, "name");
    r.ctx = name;
    const uint64_t ndim = r.u64("rank");
    std::vector<int64_t> shape(ndim);
    int64_t numel = 1;
    for (auto& d : shape) {
      d = int64_t(r.u64("shape"));
      numel *= d;
    }
    const uint64_t want = r.u64("checksum");
    const std::string payload = r.bytes(size_t(numel) * 8, "payload");
    if (fnv1a64(payload.data(), payload.size()) != want)
      throw IntegrityError("checkpoint checksum mismatch: " + name);
    Tensor t(shape);
    Reader pr(payload);
    for (auto& v : t.data) v = pr.f64("payload");
    c.add(name, std::move(t));
  }
  return c;
}

namespace {

void add_store(Container& c, const std::string& prefix, const ParamStore& s) {
  for (const auto& e : s.entries()) c.add(prefix + e.name, e.value);
}

void load_store(const Container& c, const std::string& prefix, ParamStore& s) {
  for (auto& e : s.entries()) {
    const Tensor& t = c.array(prefix + e.name);
    if (!t.same_shape(e.value))
      throw IntegrityError("checkpoint shape mismatch: " + prefix + e.name);
    e.value = t;
  }
}

void add_moments(Container& c, const std::string& prefix, std::vector<Tensor>& ts) {
  for (size_t i = 0; i < ts.size(); ++i) c.add(prefix + std::to_string(i), ts[i]);
}

void load_moments(const Container& c, const std::string& prefix, size_t n,
                  std::vector<Tensor>& ts) {
  if (!c.has(prefix + "0")) return;  // optimizer never stepped
  ts.clear();
  for (size_t i = 0; i < n; ++i) ts.push_back(c.array(prefix + std::to_string(i)));
}

void add_adam(Container& c, const std::string& name, AdamW& o) {
  add_moments(c, "opt/" + name + ".m", o.first_moment());
  add_moments(c, "opt/" + name + ".v", o.second_moment());
  c.meta["adam_t"][name] = o.steps();
}

void load_adam(const Container& c, const std::string& name, size_t n, AdamW& o) {
  load_moments(c, "opt/" + name + ".m", n, o.first_moment());
  load_moments(c, "opt/" + name + ".v", n, o.second_moment());
  if (c.meta.contains("adam_t") && c.meta["adam_t"].contains(name))
    o.set_steps(c.meta["adam_t"][name].get<int64_t>());
}

}  // namespace

void save_trainer(const std::string& path, trainer::Trainer& t, uint64_t config_hash) {
  Container c;
  c.meta["kind"] = "trainer";
  c.meta["step"] = t.sched.step;
  c.meta["opt_steps"] = t.opt_steps;
  c.meta["seed"] = std::to_string(t.seed);
  c.meta["config_hash"] = std::to_string(config_hash);
  c.meta["gate_paused_until"] = t.sched.gate.paused_until;
  c.meta["gate_fm_weight"] = t.sched.gate.fm_weight;
  c.meta["bank_size"] = t.m.bank.size();

  add_store(c, "codec/", t.m.codec.params);
  c.add("codec/cb.vectors", t.m.codec.codebook.vectors);
  c.add("codec/cb.counts", t.m.codec.codebook.ema_counts);
  c.add("codec/cb.sums", t.m.codec.codebook.ema_sums);
  add_store(c, "disc/", t.m.disc.params);
  add_store(c, "lm/core/", t.m.backbone.core);
  add_store(c, "lm/audio/", t.m.backbone.audio);
  if (t.cfg.use_bridge) add_store(c, "bridge/", t.m.bridge.params);
  if (t.cfg.use_ftp) add_store(c, "ftp/", t.m.heads.params);
  if (t.m.bank.size() > 0) c.add("sa/bank", t.m.bank.as_tensor());

  add_moments(c, "opt/codec.v", t.opt_codec.velocity());
  add_adam(c, "audio", t.opt_audio);
  add_adam(c, "bridge", t.opt_bridge);
  add_adam(c, "ftp", t.opt_ftp);
  add_adam(c, "disc", t.opt_disc);
  save(path, c);
}

trainer::Trainer load_trainer(const std::string& path, const trainer::TrainerConfig& cfg,
                              uint64_t expected_hash) {
  Container c = load(path);
  if (!c.meta.contains("kind") || c.meta["kind"] != "trainer")
    throw IntegrityError("checkpoint is not a trainer snapshot");
  if (expected_hash != 0) {
    const uint64_t stored = std::stoull(c.meta.value("config_hash", "0"));
    if (stored != expected_hash)
      throw ConfigError("checkpoint config hash does not match the supplied config");
  }
  const uint64_t seed = std::stoull(c.meta.value("seed", "0"));
  trainer::Trainer t = trainer::make_trainer(cfg, seed);

  load_store(c, "codec/", t.m.codec.params);
  t.m.codec.codebook.vectors = c.array("codec/cb.vectors");
  t.m.codec.codebook.ema_counts = c.array("codec/cb.counts");
  t.m.codec.codebook.ema_sums = c.array("codec/cb.sums");
  load_store(c, "disc/", t.m.disc.params);
  load_store(c, "lm/core/", t.m.backbone.core);
  load_store(c, "lm/audio/", t.m.backbone.audio);
  if (cfg.use_bridge) load_store(c, "bridge/", t.m.bridge.params);
  if (cfg.use_ftp) load_store(c, "ftp/", t.m.heads.params);
  if (c.has("sa/bank")) t.m.bank.restore(c.array("sa/bank"));

  load_moments(c, "opt/codec.v", t.m.codec.params.entries().size(), t.opt_codec.velocity());
  load_adam(c, "audio", t.m.backbone.audio.entries().size(), t.opt_audio);
  load_adam(c, "bridge", t.m.bridge.params.entries().size(), t.opt_bridge);
  load_adam(c, "ftp", t.m.heads.params.entries().size(), t.opt_ftp);
  load_adam(c, "disc", t.m.disc.params.entries().size(), t.opt_disc);

  t.opt_steps = c.meta.value("opt_steps", int64_t(0));
  const int64_t step = c.meta.value("step", int64_t(0));
  t.sched = trainer::schedule_at(std::min(step, cfg.schedule.total_steps), cfg.schedule);
  t.sched.step = step;
  t.sched.gate.paused_until = c.meta.value("gate_paused_until", int64_t(-1));
  t.sched.gate.fm_weight = c.meta.value("gate_fm_weight", cfg.gan.fm_start);
  return t;
}

void save_token_lm(const std::string& path, const lm::Backbone& b, uint64_t config_hash) {
  Container c;
  c.meta["kind"] = "token_lm";
  c.meta["config_hash"] = std::to_string(config_hash);
  c.meta["core_trainable"] = b.core_trainable;
  add_store(c, "core/", b.core);
  add_store(c, "audio/", b.audio);
  save(path, c);
}

lm::Backbone load_token_lm(const std::string& path, const lm::BackboneConfig& cfg,
                           uint64_t expected_hash) {
  Container c = load(path);
  if (!c.meta.contains("kind") || c.meta["kind"] != "token_lm")
    throw IntegrityError("checkpoint is not a token-lm snapshot");
  if (expected_hash != 0) {
    const uint64_t stored = std::stoull(c.meta.value("config_hash", "0"));
    if (stored != expected_hash)
      throw ConfigError("checkpoint config hash does not match the supplied config");
  }
  lm::BackboneConfig shell = cfg;
  shell.pretrain_steps = 0;  // weights are overwritten, skip the warmup pass
  lm::Backbone b = lm::build_backbone(shell, 0);
  load_store(c, "core/", b.core);
  load_store(c, "audio/", b.audio);
  b.core_trainable = c.meta.value("core_trainable", false);
  return b;
}

}  // namespace pcodec::ckpt
