#include <fstream>
#include <sstream>
#include <stdexcept>

#include "gm/runner.hpp"
#include "json.hpp"

namespace gm {

namespace {

using json = nlohmann::ordered_json;

ScenarioKind parse_kind(const std::string& s) {
  if (s == "CI") return ScenarioKind::kCI;
  if (s == "DI") return ScenarioKind::kDI;
  if (s == "MI") return ScenarioKind::kMI;
  if (s == "SMI") return ScenarioKind::kSMI;
  throw std::invalid_argument("config: unknown scenario kind '" + s + "'");
}

Metric parse_metric(const std::string& s) {
  if (s == "cosine") return Metric::kCosine;
  if (s == "squared_euclidean") return Metric::kSquaredEuclidean;
  throw std::invalid_argument("config: unknown metric '" + s + "'");
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  return j.at(key).get<T>();
}

}  // namespace

std::string scenario_kind_name(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::kCI: return "CI";
    case ScenarioKind::kDI: return "DI";
    case ScenarioKind::kMI: return "MI";
    case ScenarioKind::kSMI: return "SMI";
  }
  return "?";
}

RunConfig parse_config_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config: invalid JSON: ") +
                                e.what());
  }

  RunConfig cfg;
  const json sc = j.value("scenario", json::object());
  const int total_classes = get_or<int>(sc, "total_classes", 10);
  const int timesteps = get_or<int>(sc, "timesteps", 3);
  cfg.scenario = default_scenario(
      parse_kind(get_or<std::string>(sc, "kind", "CI")), total_classes,
      timesteps);
  if (sc.contains("class_split") && !sc.at("class_split").is_null())
    cfg.scenario.class_split =
        sc.at("class_split").get<std::vector<double>>();
  if (sc.contains("data_split") && !sc.at("data_split").is_null())
    cfg.scenario.data_split = sc.at("data_split").get<std::vector<double>>();
  if (sc.contains("mi_table") && !sc.at("mi_table").is_null())
    cfg.scenario.mi_table = sc.at("mi_table").get<MiTable>();
  cfg.scenario.labeled_fraction = get_or<double>(sc, "labeled_fraction", 0.2);
  cfg.scenario.seed = get_or<std::uint64_t>(sc, "seed", 0);

  const json data = j.value("data", json::object());
  if (data.contains("csv") && !data.at("csv").is_null()) {
    cfg.csv_path = data.at("csv").get<std::string>();
  } else {
    const json syn = data.value("synthetic", json::object());
    cfg.synthetic.per_class = get_or<int>(syn, "per_class", 250);
    cfg.synthetic.input_dim = get_or<int>(syn, "input_dim", 16);
    cfg.synthetic.separation = get_or<double>(syn, "separation", 8.0);
  }

  const json model = j.value("model", json::object());
  cfg.hidden_dims =
      get_or<std::vector<std::size_t>>(model, "hidden_dims", {64});
  cfg.embedding_dim = get_or<std::size_t>(model, "embedding_dim", 32);

  const json grow = j.value("grow", json::object());
  cfg.grow.epsilon = get_or<double>(grow, "epsilon", 0.6);
  cfg.grow.wta_k = get_or<std::size_t>(grow, "wta_k", 5);
  cfg.grow.epochs = get_or<int>(grow, "epochs", 50);
  cfg.grow.augment_sigma = get_or<double>(grow, "augment_sigma", 0.05);
  cfg.grow.batch_size = get_or<std::size_t>(grow, "batch_size", 32);
  cfg.grow.metric = parse_metric(get_or<std::string>(j, "metric", "cosine"));

  const json merge = j.value("merge", json::object());
  cfg.merge.sift_j = get_or<std::size_t>(merge, "sift_j", 15);
  cfg.merge.sift_fraction = get_or<double>(merge, "sift_fraction", 0.5);
  cfg.merge.tau = get_or<double>(merge, "tau", 0.1);
  cfg.merge.epochs = get_or<int>(merge, "epochs", 50);
  cfg.merge.alpha = get_or<double>(merge, "alpha", 0.99);
  cfg.merge.mse_in_merging = get_or<bool>(merge, "mse_in_merging", false);
  cfg.merge.sd_over_exemplars = get_or<bool>(merge, "sd_over_exemplars", true);
  cfg.merge.augment_sigma = cfg.grow.augment_sigma;
  cfg.merge.batch_size = cfg.grow.batch_size;
  cfg.merge.wta_k = cfg.grow.wta_k;

  const json weights = j.value("weights", json::object());
  cfg.weights.bce = get_or<double>(weights, "bce", 1.0);
  cfg.weights.sd = get_or<double>(weights, "sd", 1.0);
  cfg.weights.pll = get_or<double>(weights, "pll", 1.0);
  cfg.weights.mse = get_or<double>(weights, "mse", 1.0);

  const json opt = j.value("optimizer", json::object());
  cfg.learning_rate = get_or<double>(opt, "learning_rate", 0.1);
  cfg.momentum = get_or<double>(opt, "momentum", 0.9);
  cfg.weight_decay = get_or<double>(opt, "weight_decay", 1e-4);
  cfg.lr_decay_every = get_or<int>(opt, "decay_every", 60);
  cfg.lr_decay_factor = get_or<double>(opt, "decay_factor", 0.1);

  const json pre = j.value("pretrain", json::object());
  cfg.pretrain_epochs = get_or<int>(pre, "epochs", 50);
  cfg.pretrain_batch_size = get_or<std::size_t>(pre, "batch_size", 32);

  const json mem = j.value("memory", json::object());
  cfg.exemplar_budget = get_or<std::size_t>(mem, "budget", 200);

  const std::string mode = get_or<std::string>(j, "novel_count_mode", "given");
  if (mode == "given")
    cfg.novel_count_mode = NovelCountMode::kGiven;
  else if (mode == "estimate")
    cfg.novel_count_mode = NovelCountMode::kEstimate;
  else
    throw std::invalid_argument("config: novel_count_mode must be given or "
                                "estimate, got '" + mode + "'");

  if (j.contains("estimate_range") && !j.at("estimate_range").is_null()) {
    const auto r = j.at("estimate_range").get<std::vector<int>>();
    if (r.size() != 2)
      throw std::invalid_argument("config: estimate_range must be [lo, hi]");
    cfg.estimate_range = std::make_pair(r[0], r[1]);
  }

  cfg.disable_merging = get_or<bool>(j, "disable_merging", false);
  cfg.seed = get_or<std::uint64_t>(j, "seed", 1);
  cfg.out_dir = get_or<std::string>(j, "out_dir", "");
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_json(ss.str());
}

std::string config_to_json(const RunConfig& cfg) {
  json j;
  j["scenario"] = {
      {"kind", scenario_kind_name(cfg.scenario.kind)},
      {"total_classes", cfg.scenario.total_classes},
      {"timesteps", cfg.scenario.timesteps},
      {"class_split", cfg.scenario.class_split},
      {"data_split", cfg.scenario.data_split},
      {"mi_table", cfg.scenario.mi_table},
      {"labeled_fraction", cfg.scenario.labeled_fraction},
      {"seed", cfg.scenario.seed},
  };
  if (!cfg.csv_path.empty()) {
    j["data"] = {{"csv", cfg.csv_path}};
  } else {
    j["data"] = {{"synthetic",
                  {{"per_class", cfg.synthetic.per_class},
                   {"input_dim", cfg.synthetic.input_dim},
                   {"separation", cfg.synthetic.separation}}}};
  }
  j["model"] = {{"hidden_dims", cfg.hidden_dims},
                {"embedding_dim", cfg.embedding_dim}};
  j["grow"] = {{"epsilon", cfg.grow.epsilon},
               {"wta_k", cfg.grow.wta_k},
               {"epochs", cfg.grow.epochs},
               {"augment_sigma", cfg.grow.augment_sigma},
               {"batch_size", cfg.grow.batch_size}};
  j["merge"] = {{"sift_j", cfg.merge.sift_j},
                {"sift_fraction", cfg.merge.sift_fraction},
                {"tau", cfg.merge.tau},
                {"epochs", cfg.merge.epochs},
                {"alpha", cfg.merge.alpha},
                {"mse_in_merging", cfg.merge.mse_in_merging},
                {"sd_over_exemplars", cfg.merge.sd_over_exemplars}};
  j["weights"] = {{"bce", cfg.weights.bce},
                  {"sd", cfg.weights.sd},
                  {"pll", cfg.weights.pll},
                  {"mse", cfg.weights.mse}};
  j["optimizer"] = {{"learning_rate", cfg.learning_rate},
                    {"momentum", cfg.momentum},
                    {"weight_decay", cfg.weight_decay},
                    {"decay_every", cfg.lr_decay_every},
                    {"decay_factor", cfg.lr_decay_factor}};
  j["pretrain"] = {{"epochs", cfg.pretrain_epochs},
                   {"batch_size", cfg.pretrain_batch_size}};
  j["memory"] = {{"budget", cfg.exemplar_budget}};
  j["metric"] = cfg.grow.metric == Metric::kCosine ? "cosine"
                                                   : "squared_euclidean";
  j["novel_count_mode"] =
      cfg.novel_count_mode == NovelCountMode::kGiven ? "given" : "estimate";
  if (cfg.estimate_range)
    j["estimate_range"] = {cfg.estimate_range->first,
                           cfg.estimate_range->second};
  else
    j["estimate_range"] = nullptr;
  j["disable_merging"] = cfg.disable_merging;
  j["seed"] = cfg.seed;
  j["out_dir"] = cfg.out_dir;
  return j.dump(2) + "\n";
}

}  // namespace gm
