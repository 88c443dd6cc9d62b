#include <bit>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "gm/runner.hpp"
#include "json.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian");

namespace gm {

namespace {

constexpr char kMagic[4] = {'G', 'M', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

struct Writer {
  std::ofstream out;
  explicit Writer(const std::string& path)
      : out(path, std::ios::binary | std::ios::trunc) {
    if (!out) throw std::runtime_error("checkpoint: cannot open " + path);
  }
  template <typename T>
  void put(T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void put_doubles(const std::vector<double>& v) {
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
};

struct Reader {
  std::ifstream in;
  std::string path;
  explicit Reader(const std::string& p) : in(p, std::ios::binary), path(p) {
    if (!in) throw std::runtime_error("checkpoint: cannot open " + p);
  }
  template <typename T>
  T get() {
    T v;
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in)
      throw std::runtime_error("checkpoint: truncated file " + path);
    return v;
  }
  std::vector<double> get_doubles(std::size_t n) {
    std::vector<double> v(n);
    in.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
    if (!in)
      throw std::runtime_error("checkpoint: truncated file " + path);
    return v;
  }
};

void write_encoder(Writer& w, const EncoderParams& e) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(e.layers.size()));
  for (const Layer& l : e.layers) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(l.out));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(l.in));
    w.put_doubles(l.w);
    w.put_doubles(l.b);
  }
}

EncoderParams read_encoder(Reader& r) {
  EncoderParams e;
  const std::uint32_t n = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    Layer l;
    l.out = r.get<std::uint32_t>();
    l.in = r.get<std::uint32_t>();
    l.w = r.get_doubles(l.out * l.in);
    l.b = r.get_doubles(l.out);
    e.layers.push_back(std::move(l));
  }
  return e;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  Writer w(path);
  w.out.write(kMagic, 4);
  w.put<std::uint32_t>(kVersion);
  w.put<std::uint64_t>(ckpt.seed);
  w.put<std::int32_t>(ckpt.timestep);

  write_encoder(w, ckpt.static_branch);
  write_encoder(w, ckpt.dynamic_branch);

  w.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.head.k));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.head.dim));
  w.put_doubles(ckpt.head.w);
  w.put_doubles(ckpt.head.b);

  w.put<std::uint64_t>(ckpt.store.budget);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.store.exemplars.size()));
  for (const auto& [cls, list] : ckpt.store.exemplars) {
    w.put<std::int32_t>(cls);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(list.size()));
    for (const Exemplar& e : list) {
      w.put<std::int32_t>(e.label);
      w.put<std::int32_t>(e.source_timestep);
      w.put<std::uint32_t>(static_cast<std::uint32_t>(e.sample.size()));
      w.put_doubles(e.sample);
    }
  }
  w.put<std::uint32_t>(
      static_cast<std::uint32_t>(ckpt.store.prototypes.size()));
  for (const auto& [cls, p] : ckpt.store.prototypes) {
    w.put<std::int32_t>(cls);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(p.mu.size()));
    w.put_doubles(p.mu);
    w.put<std::uint64_t>(p.support);
    w.put<std::uint8_t>(p.degenerate ? 1 : 0);
  }

  w.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.ledger.records.size()));
  for (const TimestepRecord& rec : ckpt.ledger.records) {
    w.put<std::int32_t>(rec.t);
    w.put<double>(rec.acc_known);
    w.put<std::uint8_t>(rec.acc_novel ? 1 : 0);
    w.put<double>(rec.acc_novel ? *rec.acc_novel : 0.0);
  }
  w.put<std::uint32_t>(
      static_cast<std::uint32_t>(ckpt.ledger.estimated_counts.size()));
  for (int c : ckpt.ledger.estimated_counts) w.put<std::int32_t>(c);

  if (!w.out) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  Reader r(path);
  char magic[4];
  r.in.read(magic, 4);
  if (!r.in || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path +
                             " (expected \"GMCK\")");
  Checkpoint ckpt;
  ckpt.version = r.get<std::uint32_t>();
  if (ckpt.version != kVersion)
    throw std::runtime_error("checkpoint: unsupported version " +
                             std::to_string(ckpt.version) + " in " + path);
  ckpt.seed = r.get<std::uint64_t>();
  ckpt.timestep = r.get<std::int32_t>();

  ckpt.static_branch = read_encoder(r);
  ckpt.dynamic_branch = read_encoder(r);

  ckpt.head.k = r.get<std::uint32_t>();
  ckpt.head.dim = r.get<std::uint32_t>();
  ckpt.head.w = r.get_doubles(ckpt.head.k * ckpt.head.dim);
  ckpt.head.b = r.get_doubles(ckpt.head.k);

  ckpt.store.budget = r.get<std::uint64_t>();
  const std::uint32_t n_classes = r.get<std::uint32_t>();
  for (std::uint32_t c = 0; c < n_classes; ++c) {
    const std::int32_t cls = r.get<std::int32_t>();
    const std::uint32_t n_ex = r.get<std::uint32_t>();
    std::vector<Exemplar>& list = ckpt.store.exemplars[cls];
    for (std::uint32_t i = 0; i < n_ex; ++i) {
      Exemplar e;
      e.label = r.get<std::int32_t>();
      e.source_timestep = r.get<std::int32_t>();
      const std::uint32_t dim = r.get<std::uint32_t>();
      e.sample = r.get_doubles(dim);
      list.push_back(std::move(e));
    }
  }
  const std::uint32_t n_protos = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_protos; ++i) {
    Prototype p;
    p.class_id = r.get<std::int32_t>();
    const std::uint32_t dim = r.get<std::uint32_t>();
    p.mu = r.get_doubles(dim);
    p.support = r.get<std::uint64_t>();
    p.degenerate = r.get<std::uint8_t>() != 0;
    ckpt.store.prototypes[p.class_id] = std::move(p);
  }

  const std::uint32_t n_records = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_records; ++i) {
    TimestepRecord rec;
    rec.t = r.get<std::int32_t>();
    rec.acc_known = r.get<double>();
    const bool has_novel = r.get<std::uint8_t>() != 0;
    const double novel = r.get<double>();
    if (has_novel) rec.acc_novel = novel;
    ckpt.ledger.records.push_back(rec);
  }
  const std::uint32_t n_est = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_est; ++i)
    ckpt.ledger.estimated_counts.push_back(r.get<std::int32_t>());
  return ckpt;
}

namespace {
// Report values are decimals with 12 significant digits, so artifacts of
// double subtraction (0.9 - 0.8) still print as the decimal they mean.
double round12(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return std::strtod(buf, nullptr);
}
}  // namespace

void emit_report(const MetricsLedger& ledger, const FinalMetrics& final_metrics,
                 const std::string& scenario_name, std::uint64_t seed,
                 const std::string& dir) {
  using json = nlohmann::ordered_json;
  json j;
  j["scenario"] = scenario_name;
  j["seed"] = seed;
  j["timesteps"] = json::array();
  for (const TimestepRecord& r : ledger.records) {
    json rec;
    rec["t"] = r.t;
    rec["acc_known"] = round12(r.acc_known);
    rec["acc_novel"] = r.acc_novel ? json(round12(*r.acc_novel)) : json(nullptr);
    j["timesteps"].push_back(rec);
  }
  j["m_f"] = round12(final_metrics.m_f);
  j["m_d"] =
      final_metrics.m_d ? json(round12(*final_metrics.m_d)) : json(nullptr);
  j["estimated_counts"] = ledger.estimated_counts.empty()
                              ? json(nullptr)
                              : json(ledger.estimated_counts);

  {
    std::ofstream out(dir + "/metrics.json");
    if (!out) throw std::runtime_error("emit_report: cannot write to " + dir);
    out << j.dump(2) << "\n";
  }
  {
    std::ofstream out(dir + "/metrics.csv");
    if (!out) throw std::runtime_error("emit_report: cannot write to " + dir);
    out << "t,acc_known,acc_novel\n";
    char buf[64];
    for (const TimestepRecord& r : ledger.records) {
      std::snprintf(buf, sizeof(buf), "%.9g", r.acc_known);
      out << r.t << ',' << buf << ',';
      if (r.acc_novel) {
        std::snprintf(buf, sizeof(buf), "%.9g", *r.acc_novel);
        out << buf;
      }
      out << "\n";
    }
  }
}

}  // namespace gm
