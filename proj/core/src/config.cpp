// SPDX-License-Identifier: Apache-2.0

#include <cstdlib>
#include <string>
#include <thread>

#include "lrf/error.hpp"
#include "lrf/pipeline.hpp"

namespace lrf {

using nlohmann::json;

namespace {

[[noreturn]] void config_error(const std::string &what) {
  throw Error(ErrorCode::kConfigError, what);
}

// Rejects keys that the default document does not have.
void check_keys(const json &given, const json &reference, const std::string &prefix) {
  for (auto it = given.begin(); it != given.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!reference.contains(it.key()))
      config_error("unknown config key " + path);
    const json &ref = reference.at(it.key());
    if (ref.is_object() && !it.value().is_null()) {
      if (!it.value().is_object())
        config_error(path + " must be an object");
      check_keys(it.value(), ref, path);
    }
  }
}

template <class T> T read(const json &j, const char *key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null())
    return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception &e) {
    config_error(std::string("bad value for ") + key + ": " + e.what());
  }
}

} // namespace

json config_to_json(const RunConfig &cfg) {
  json types = json::array();
  for (auto t : cfg.model.types)
    types.push_back(to_string(t));
  return {
      {"seed", cfg.seed},
      {"model",
       {{"blocks", cfg.model.blocks},
        {"hidden", cfg.model.hidden},
        {"types", types},
        {"decay", cfg.model.decay},
        {"activation", to_string(cfg.model.activation)},
        {"planted_rank", cfg.model.planted_rank ? json(*cfg.model.planted_rank) : json(nullptr)}}},
      {"calib",
       {{"n_samples", cfg.calib.n_samples},
        {"holdout_samples", cfg.calib.holdout_samples},
        {"distribution", to_string(cfg.calib.distribution)},
        {"normalize", cfg.calib.normalize}}},
      {"target_ratio", cfg.target_ratio},
      {"allocation", to_string(cfg.allocation)},
      {"engine", to_string(cfg.engine)},
      {"refine", cfg.refine},
      {"engine_params",
       {{"jitter", cfg.engine_params.jitter},
        {"eps", cfg.engine_params.eps},
        {"rho", cfg.engine_params.rho},
        {"admm_iters", cfg.engine_params.admm_iters},
        {"admm_tol", cfg.engine_params.admm_tol},
        {"pinv_tol", cfg.engine_params.pinv_tol < 0 ? json(nullptr) : json(cfg.engine_params.pinv_tol)},
        {"lbfgs",
         {{"lr", cfg.engine_params.lbfgs.initial_step},
          {"max_iter", cfg.engine_params.lbfgs.max_iter},
          {"memory", cfg.engine_params.lbfgs.memory}}}}},
      {"allocation_params",
       {{"score_clamp", cfg.allocation_params.score_clamp},
        {"ratio_floor", cfg.allocation_params.ratio_floor},
        {"ratio_ceiling", cfg.allocation_params.ratio_ceiling}}},
      {"threads", cfg.threads},
      {"output_dir", cfg.output_dir},
      {"model_path", cfg.model_path},
  };
}

RunConfig config_from_json(const json &j) {
  if (!j.is_object())
    config_error("config must be a JSON object");
  const RunConfig defaults;
  check_keys(j, config_to_json(defaults), "");

  RunConfig cfg = defaults;
  cfg.seed = read<std::uint64_t>(j, "seed", defaults.seed);
  cfg.target_ratio = read<double>(j, "target_ratio", defaults.target_ratio);
  if (!(cfg.target_ratio >= 0.0 && cfg.target_ratio < 1.0))
    config_error("target_ratio must lie in [0, 1)");
  cfg.refine = read<bool>(j, "refine", defaults.refine);
  cfg.threads = read<int>(j, "threads", defaults.threads);
  cfg.output_dir = read<std::string>(j, "output_dir", defaults.output_dir);
  cfg.model_path = read<std::string>(j, "model_path", defaults.model_path);

  const auto alloc = parse_allocation(read<std::string>(j, "allocation", "heterogeneous"));
  if (!alloc)
    config_error("allocation must be homogeneous or heterogeneous");
  cfg.allocation = *alloc;
  const auto engine = parse_engine(read<std::string>(j, "engine", "double_svd"));
  if (!engine)
    config_error("engine must be one of plain, cholesky, double_svd, admm_noise");
  cfg.engine = *engine;

  if (j.contains("model") && j.at("model").is_object()) {
    const json &m = j.at("model");
    cfg.model.blocks = read<int>(m, "blocks", defaults.model.blocks);
    cfg.model.hidden = read<int>(m, "hidden", defaults.model.hidden);
    if (cfg.model.blocks < 1 || cfg.model.hidden < 2)
      config_error("model needs blocks >= 1 and hidden >= 2");
    if (m.contains("types")) {
      cfg.model.types.clear();
      for (const auto &t : m.at("types")) {
        const auto parsed = t.is_string() ? parse_matrix_type(t.get<std::string>()) : std::nullopt;
        if (!parsed)
          config_error("unknown matrix type " + t.dump());
        cfg.model.types.push_back(*parsed);
      }
      if (cfg.model.types.empty())
        config_error("model.types must not be empty");
    }
    cfg.model.decay = read<std::vector<double>>(m, "decay", defaults.model.decay);
    const auto act = parse_activation(read<std::string>(m, "activation", "gelu"));
    if (!act)
      config_error("activation must be identity, relu or gelu");
    cfg.model.activation = *act;
    if (m.contains("planted_rank") && !m.at("planted_rank").is_null())
      cfg.model.planted_rank = read<int>(m, "planted_rank", 0);
  }
  if (cfg.model.decay.empty())
    config_error("model.decay needs at least one entry");

  if (j.contains("calib") && j.at("calib").is_object()) {
    const json &c = j.at("calib");
    cfg.calib.n_samples = read<int>(c, "n_samples", defaults.calib.n_samples);
    cfg.calib.holdout_samples = read<int>(c, "holdout_samples", defaults.calib.holdout_samples);
    const auto dist = parse_distribution(read<std::string>(c, "distribution", "gaussian"));
    if (!dist)
      config_error("calib.distribution must be gaussian, heavy_tailed or low_rank(r)");
    cfg.calib.distribution = *dist;
    cfg.calib.normalize = read<bool>(c, "normalize", defaults.calib.normalize);
    if (cfg.calib.n_samples < 1 || cfg.calib.holdout_samples < 1)
      config_error("calib sample counts must be >= 1");
  }

  if (j.contains("engine_params") && j.at("engine_params").is_object()) {
    const json &e = j.at("engine_params");
    auto &p = cfg.engine_params;
    p.jitter = read<double>(e, "jitter", p.jitter);
    p.eps = read<double>(e, "eps", p.eps);
    p.rho = read<double>(e, "rho", p.rho);
    p.admm_iters = read<int>(e, "admm_iters", p.admm_iters);
    p.admm_tol = read<double>(e, "admm_tol", p.admm_tol);
    p.pinv_tol = read<double>(e, "pinv_tol", -1.0);
    if (e.contains("lbfgs") && e.at("lbfgs").is_object()) {
      const json &l = e.at("lbfgs");
      p.lbfgs.initial_step = read<double>(l, "lr", p.lbfgs.initial_step);
      p.lbfgs.max_iter = read<int>(l, "max_iter", p.lbfgs.max_iter);
      p.lbfgs.memory = read<int>(l, "memory", p.lbfgs.memory);
    }
    if (p.jitter < 0 || p.eps < 0 || p.rho <= 0 || p.admm_iters < 0 || p.lbfgs.initial_step <= 0 ||
        p.lbfgs.max_iter < 0 || p.lbfgs.memory < 1)
      config_error("engine_params out of range");
  }

  if (j.contains("allocation_params") && j.at("allocation_params").is_object()) {
    const json &a = j.at("allocation_params");
    auto &p = cfg.allocation_params;
    p.score_clamp = read<double>(a, "score_clamp", p.score_clamp);
    p.ratio_floor = read<double>(a, "ratio_floor", p.ratio_floor);
    p.ratio_ceiling = read<double>(a, "ratio_ceiling", p.ratio_ceiling);
    if (!(p.score_clamp > 1.0) || !(p.ratio_floor >= 0.0) || !(p.ratio_ceiling < 1.0) ||
        p.ratio_floor > p.ratio_ceiling)
      config_error("allocation_params out of range");
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path &path) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::parse_error &e) {
    config_error(path.string() + ": " + e.what());
  } catch (const Error &e) {
    config_error(e.what());
  }
  return config_from_json(j);
}

int resolve_threads(const RunConfig &cfg) {
  if (const char *env = std::getenv("LRF_THREADS"); env && *env) {
    const int v = std::atoi(env);
    if (v > 0)
      return v;
  }
  if (cfg.threads > 0)
    return cfg.threads;
  return std::max(1u, std::thread::hardware_concurrency());
}

} // namespace lrf
