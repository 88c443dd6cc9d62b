#include "gm/stream.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "gm/rng.hpp"

namespace gm {

namespace {

constexpr double kPropTol = 1e-9;

void check_proportions(const std::vector<double>& p, const char* what) {
  if (p.empty()) throw std::invalid_argument(std::string(what) + ": empty");
  double sum = 0.0;
  for (double f : p) {
    if (f < 0.0) throw std::invalid_argument(std::string(what) + ": negative");
    sum += f;
  }
  if (std::abs(sum - 1.0) > kPropTol)
    throw std::invalid_argument(std::string(what) +
                                ": proportions must sum to 1");
}

// Cumulative-rounding partition of n items into |fractions| chunks.
std::vector<std::size_t> chunk_boundaries(std::size_t n,
                                          const std::vector<double>& fractions) {
  std::vector<std::size_t> bounds;
  bounds.push_back(0);
  double cum = 0.0;
  for (std::size_t i = 0; i + 1 < fractions.size(); ++i) {
    cum += fractions[i];
    bounds.push_back(static_cast<std::size_t>(
        std::llround(cum * static_cast<double>(n))));
  }
  bounds.push_back(n);
  return bounds;
}

std::vector<double> renormalize(std::vector<double> row) {
  double sum = 0.0;
  for (double f : row) sum += f;
  if (sum <= 0.0)
    throw std::invalid_argument("scenario table row sums to zero");
  for (double& f : row) f /= sum;
  return row;
}

// Samples arrived with explicit timesteps: honor the given assignment and
// only apply the label-visibility and cumulative-test rules.
Stream build_preassigned(const std::vector<Sample>& sorted,
                         const ScenarioSpec& spec) {
  const int t_count = spec.timesteps + 1;
  Stream stream;
  stream.batches.resize(static_cast<std::size_t>(t_count));
  for (int t = 0; t < t_count; ++t)
    stream.batches[static_cast<std::size_t>(t)].t = t;

  for (const Sample& s : sorted) {
    if (s.timestep >= t_count)
      throw std::invalid_argument("build_stream: sample " +
                                  std::to_string(s.id) + " has timestep " +
                                  std::to_string(s.timestep) + " > T");
    if (s.split == Split::kTest && s.label == kUnlabeled)
      throw std::invalid_argument("build_stream: test sample " +
                                  std::to_string(s.id) + " must be labeled");
    if (s.label != kUnlabeled) {
      auto it = stream.class_introduced_at.find(s.label);
      if (it == stream.class_introduced_at.end() || s.timestep < it->second)
        stream.class_introduced_at[s.label] = s.timestep;
    }
  }

  for (const Sample& s : sorted) {
    if (s.split != Split::kTrain) continue;
    Sample copy = s;
    if (copy.timestep >= 1 && spec.kind != ScenarioKind::kSMI)
      copy.label = kUnlabeled;
    stream.batches[static_cast<std::size_t>(copy.timestep)].train.push_back(
        std::move(copy));
  }
  if (spec.kind == ScenarioKind::kSMI) {
    for (int t = 1; t < t_count; ++t) {
      auto& train = stream.batches[static_cast<std::size_t>(t)].train;
      const std::size_t keep = static_cast<std::size_t>(std::floor(
          spec.labeled_fraction * static_cast<double>(train.size())));
      for (std::size_t i = keep; i < train.size(); ++i)
        train[i].label = kUnlabeled;
    }
  }

  for (int t = 0; t < t_count; ++t) {
    StreamBatch& batch = stream.batches[static_cast<std::size_t>(t)];
    int novel = 0;
    for (const auto& [cls, intro] : stream.class_introduced_at)
      if (intro == t) ++novel;
    batch.novel_class_count = novel;
    for (const Sample& s : sorted) {
      if (s.split != Split::kTest) continue;
      auto it = stream.class_introduced_at.find(s.label);
      if (it != stream.class_introduced_at.end() && it->second <= t) {
        Sample copy = s;
        copy.timestep = t;
        batch.test.push_back(std::move(copy));
      }
    }
  }
  return stream;
}

}  // namespace

std::vector<Sample> generate_synthetic(int classes, int per_class,
                                       int input_dim, double separation,
                                       std::uint64_t seed) {
  if (classes < 2) throw std::invalid_argument("generate_synthetic: K >= 2");
  if (per_class < 2) throw std::invalid_argument("generate_synthetic: n >= 2");
  if (separation <= 0.0)
    throw std::invalid_argument("generate_synthetic: separation > 0");

  Rng rng(seed);
  std::vector<Vec> means;
  means.reserve(static_cast<std::size_t>(classes));
  int tries = 0;
  while (means.size() < static_cast<std::size_t>(classes)) {
    if (++tries > 100000)
      throw std::runtime_error(
          "generate_synthetic: could not place class means after 1e5 tries; "
          "increase input_dim or decrease separation");
    Vec dir(static_cast<std::size_t>(input_dim));
    for (double& v : dir) v = rng.next_normal();
    dir = l2_normalize(dir);
    for (double& v : dir) v *= separation;
    bool ok = true;
    for (const Vec& m : means) {
      if (std::sqrt(distance(m, dir, Metric::kSquaredEuclidean)) < separation) {
        ok = false;
        break;
      }
    }
    if (ok) means.push_back(std::move(dir));
  }

  const int n_train = static_cast<int>(std::floor(0.8 * per_class));
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(classes) * per_class);
  std::int64_t next_id = 0;
  for (int c = 0; c < classes; ++c) {
    for (int i = 0; i < per_class; ++i) {
      Sample s;
      s.id = next_id++;
      s.label = c;
      s.split = i < n_train ? Split::kTrain : Split::kTest;
      s.timestep = -1;
      s.x.resize(static_cast<std::size_t>(input_dim));
      for (std::size_t d = 0; d < s.x.size(); ++d)
        s.x[d] = means[static_cast<std::size_t>(c)][d] + rng.next_normal();
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::vector<Sample> load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_csv: cannot open " + path);

  std::vector<Sample> out;
  std::string line;
  std::size_t line_no = 0;
  std::size_t dim = 0;
  bool have_dim = false;

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (!line.empty() && line.back() == '\r') line.pop_back();

    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.push_back("");

    if (line_no == 1) {
      // header is optional: detect by a non-numeric first field
      try {
        std::size_t pos = 0;
        (void)std::stoll(fields.at(0), &pos);
        if (pos != fields.at(0).size()) throw std::invalid_argument("");
      } catch (...) {
        continue;
      }
    }

    auto fail = [&](const std::string& why) -> std::runtime_error {
      return std::runtime_error("load_csv: line " + std::to_string(line_no) +
                                ": " + why);
    };
    if (fields.size() < 5) throw fail("expected id,split,timestep,label,f0,...");

    Sample s;
    try {
      s.id = std::stoll(fields[0]);
      s.timestep = std::stoi(fields[2]);
      s.label = std::stoi(fields[3]);
    } catch (...) {
      throw fail("malformed integer field");
    }
    if (fields[1] == "train")
      s.split = Split::kTrain;
    else if (fields[1] == "test")
      s.split = Split::kTest;
    else
      throw fail("split must be train or test, got '" + fields[1] + "'");

    const std::size_t n_features = fields.size() - 4;
    if (!have_dim) {
      dim = n_features;
      have_dim = true;
    } else if (n_features != dim) {
      throw fail("inconsistent dimension: expected " + std::to_string(dim) +
                 " features, got " + std::to_string(n_features));
    }
    s.x.resize(n_features);
    for (std::size_t i = 0; i < n_features; ++i) {
      try {
        std::size_t pos = 0;
        s.x[i] = std::stod(fields[4 + i], &pos);
        if (pos != fields[4 + i].size()) throw std::invalid_argument("");
      } catch (...) {
        throw fail("malformed feature value '" + fields[4 + i] + "'");
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

void save_csv(const std::string& path, const std::vector<Sample>& samples) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_csv: cannot open " + path);
  const std::size_t dim = samples.empty() ? 0 : samples.front().x.size();
  out << "id,split,timestep,label";
  for (std::size_t d = 0; d < dim; ++d) out << ",f" << d;
  out << "\n";
  char buf[64];
  for (const Sample& s : samples) {
    out << s.id << ',' << (s.split == Split::kTrain ? "train" : "test") << ','
        << s.timestep << ',' << s.label;
    for (double v : s.x) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      out << ',' << buf;
    }
    out << "\n";
  }
}

ScenarioSpec default_scenario(ScenarioKind kind, int total_classes,
                              int timesteps) {
  if (timesteps < 0)
    throw std::invalid_argument("default_scenario: timesteps must be >= 0");
  ScenarioSpec spec;
  spec.kind = kind;
  spec.total_classes = total_classes;
  spec.timesteps = timesteps;
  const int t_count = timesteps + 1;

  if (timesteps == 0) {
    spec.class_split = {1.0};
    spec.data_split = {1.0};
    spec.mi_table = {{1.0}};
    return spec;
  }

  // 70% of classes up front, the rest spread evenly over the steps.
  spec.class_split.assign(static_cast<std::size_t>(t_count), 0.0);
  spec.class_split[0] = 0.7;
  for (int t = 1; t < t_count; ++t)
    spec.class_split[static_cast<std::size_t>(t)] = 0.3 / timesteps;

  // 25% of the data in the initial stage, the rest evenly.
  spec.data_split.assign(static_cast<std::size_t>(t_count), 0.0);
  spec.data_split[0] = 0.25;
  for (int t = 1; t < t_count; ++t)
    spec.data_split[static_cast<std::size_t>(t)] = 0.75 / timesteps;

  // Mixed-incremental table. For three steps this mirrors the published
  // 87/7/2/3, 70/20/10, 90/10, 100 mixture (rows renormalized); other step
  // counts get a generalized declining mixture.
  spec.mi_table.clear();
  if (timesteps == 3) {
    spec.mi_table = {{0.87, 0.07, 0.02, 0.03},
                     {0.0, 0.70, 0.20, 0.10},
                     {0.0, 0.0, 0.90, 0.10},
                     {0.0, 0.0, 0.0, 1.0}};
  } else {
    for (int b = 0; b < t_count; ++b) {
      std::vector<double> row(static_cast<std::size_t>(t_count), 0.0);
      const int later = timesteps - b;
      if (b == timesteps) {
        row[static_cast<std::size_t>(b)] = 1.0;
      } else {
        row[static_cast<std::size_t>(b)] = b == 0 ? 0.87 : 0.7;
        const double rest = 1.0 - row[static_cast<std::size_t>(b)];
        for (int t = b + 1; t < t_count; ++t)
          row[static_cast<std::size_t>(t)] = rest / later;
      }
      spec.mi_table.push_back(std::move(row));
    }
  }
  for (auto& row : spec.mi_table) row = renormalize(row);
  return spec;
}

Stream build_stream(const std::vector<Sample>& samples,
                    const ScenarioSpec& spec) {
  if (spec.timesteps < 0)
    throw std::invalid_argument("build_stream: timesteps must be >= 0");
  const int t_count = spec.timesteps + 1;

  std::vector<Sample> sorted = samples;
  std::sort(sorted.begin(), sorted.end(),
            [](const Sample& a, const Sample& b) { return a.id < b.id; });
  if (sorted.empty()) throw std::invalid_argument("build_stream: no samples");

  std::size_t with_timestep = 0;
  for (const Sample& s : sorted)
    if (s.timestep >= 0) ++with_timestep;
  if (with_timestep == sorted.size())
    return build_preassigned(sorted, spec);
  if (with_timestep != 0)
    throw std::invalid_argument(
        "build_stream: either all or no samples may carry preassigned "
        "timesteps");

  for (const Sample& s : sorted) {
    if (s.label == kUnlabeled)
      throw std::invalid_argument(
          "build_stream: unlabeled sample " + std::to_string(s.id) +
          "; scenario construction needs ground-truth labels");
  }

  std::set<int> class_set;
  for (const Sample& s : sorted) class_set.insert(s.label);
  std::vector<int> classes(class_set.begin(), class_set.end());
  const std::size_t k = classes.size();

  Stream stream;
  stream.batches.resize(static_cast<std::size_t>(t_count));
  for (int t = 0; t < t_count; ++t) stream.batches[static_cast<std::size_t>(t)].t = t;

  // class block boundaries (CI/MI/SMI); DI keeps everything in block 0
  std::vector<int> block_of_class(k, 0);
  if (spec.kind != ScenarioKind::kDI) {
    std::vector<double> split = spec.class_split;
    if (split.empty())
      split = default_scenario(spec.kind, static_cast<int>(k), spec.timesteps)
                  .class_split;
    check_proportions(split, "class_split");
    if (static_cast<int>(split.size()) != t_count)
      throw std::invalid_argument("build_stream: class_split length must be T+1");
    const auto bounds = chunk_boundaries(k, split);
    for (int t = 0; t < t_count; ++t) {
      if (bounds[static_cast<std::size_t>(t)] >=
          bounds[static_cast<std::size_t>(t) + 1])
        throw std::invalid_argument(
            "build_stream: class proportions leave timestep " +
            std::to_string(t) + " without classes");
      for (std::size_t c = bounds[static_cast<std::size_t>(t)];
           c < bounds[static_cast<std::size_t>(t) + 1]; ++c)
        block_of_class[c] = t;
    }
  }

  std::map<int, int> block_index;
  for (std::size_t c = 0; c < k; ++c) block_index[classes[c]] = block_of_class[c];

  // per-block data fractions over timesteps
  std::vector<std::vector<double>> data_rows;
  switch (spec.kind) {
    case ScenarioKind::kCI: {
      // all of a class's data arrives when its block is introduced
      data_rows.resize(static_cast<std::size_t>(t_count));
      for (int b = 0; b < t_count; ++b) {
        data_rows[static_cast<std::size_t>(b)].assign(
            static_cast<std::size_t>(t_count), 0.0);
        data_rows[static_cast<std::size_t>(b)][static_cast<std::size_t>(b)] = 1.0;
      }
      break;
    }
    case ScenarioKind::kDI: {
      std::vector<double> split = spec.data_split;
      if (split.empty())
        split = default_scenario(spec.kind, static_cast<int>(k), spec.timesteps)
                    .data_split;
      check_proportions(split, "data_split");
      if (static_cast<int>(split.size()) != t_count)
        throw std::invalid_argument("build_stream: data_split length must be T+1");
      data_rows.assign(1, split);
      break;
    }
    case ScenarioKind::kMI:
    case ScenarioKind::kSMI: {
      MiTable table = spec.mi_table;
      if (table.empty())
        table = default_scenario(spec.kind, static_cast<int>(k), spec.timesteps)
                    .mi_table;
      if (static_cast<int>(table.size()) != t_count)
        throw std::invalid_argument("build_stream: mi_table needs T+1 rows");
      for (auto& row : table) {
        if (static_cast<int>(row.size()) != t_count)
          throw std::invalid_argument("build_stream: mi_table rows need T+1 cols");
        row = renormalize(row);
      }
      data_rows = table;
      break;
    }
  }

  // introduction timestep: first timestep with a positive data share
  for (std::size_t c = 0; c < k; ++c) {
    const int b = spec.kind == ScenarioKind::kDI ? 0 : block_of_class[c];
    const auto& row = data_rows[spec.kind == ScenarioKind::kDI
                                    ? 0
                                    : static_cast<std::size_t>(b)];
    int intro = 0;
    for (int t = 0; t < t_count; ++t) {
      if (row[static_cast<std::size_t>(t)] > 0.0) {
        intro = t;
        break;
      }
    }
    stream.class_introduced_at[classes[c]] = intro;
  }

  // chunk each class's train data across timesteps by id order
  std::map<int, std::vector<const Sample*>> train_by_class;
  std::map<int, std::vector<const Sample*>> test_by_class;
  for (const Sample& s : sorted) {
    if (s.split == Split::kTrain)
      train_by_class[s.label].push_back(&s);
    else
      test_by_class[s.label].push_back(&s);
  }

  for (const auto& [cls, list] : train_by_class) {
    const int b = spec.kind == ScenarioKind::kDI ? 0 : block_index.at(cls);
    const auto& row = data_rows[static_cast<std::size_t>(
        spec.kind == ScenarioKind::kDI ? 0 : b)];
    const auto bounds = chunk_boundaries(list.size(), row);
    for (int t = 0; t < t_count; ++t) {
      for (std::size_t i = bounds[static_cast<std::size_t>(t)];
           i < bounds[static_cast<std::size_t>(t) + 1]; ++i) {
        Sample s = *list[i];
        s.timestep = t;
        if (t >= 1) s.label = kUnlabeled;  // SMI restores a fraction below
        stream.batches[static_cast<std::size_t>(t)].train.push_back(
            std::move(s));
      }
    }
  }

  // SMI: the lowest-id floor(fraction * N) train samples of each t >= 1
  // batch keep their labels
  if (spec.kind == ScenarioKind::kSMI) {
    if (spec.labeled_fraction < 0.0 || spec.labeled_fraction > 1.0)
      throw std::invalid_argument("build_stream: labeled_fraction in [0,1]");
    std::map<std::int64_t, int> truth;
    for (const Sample& s : sorted) truth[s.id] = s.label;
    for (int t = 1; t < t_count; ++t) {
      auto& train = stream.batches[static_cast<std::size_t>(t)].train;
      std::sort(train.begin(), train.end(),
                [](const Sample& a, const Sample& b) { return a.id < b.id; });
      const std::size_t keep = static_cast<std::size_t>(
          std::floor(spec.labeled_fraction * static_cast<double>(train.size())));
      for (std::size_t i = 0; i < keep; ++i)
        train[i].label = truth.at(train[i].id);
    }
  }

  // cumulative test sets and per-timestep novel counts
  for (int t = 0; t < t_count; ++t) {
    StreamBatch& batch = stream.batches[static_cast<std::size_t>(t)];
    std::sort(batch.train.begin(), batch.train.end(),
              [](const Sample& a, const Sample& b) { return a.id < b.id; });
    int novel = 0;
    for (const auto& [cls, intro] : stream.class_introduced_at) {
      if (intro == t) ++novel;
      if (intro <= t) {
        auto it = test_by_class.find(cls);
        if (it != test_by_class.end())
          for (const Sample* s : it->second) {
            Sample copy = *s;
            copy.timestep = t;
            batch.test.push_back(copy);
          }
      }
    }
    std::sort(batch.test.begin(), batch.test.end(),
              [](const Sample& a, const Sample& b) { return a.id < b.id; });
    batch.novel_class_count = novel;
  }
  return stream;
}

}  // namespace gm
