#include "aef/run_config.hpp"

#include <fstream>
#include <set>

namespace aef::train {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::string& where,
                const std::set<std::string>& allowed) {
  require(j.is_object(), "config: " + where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      throw DomainError("config: unknown field '" + where + "." + it.key() + "'");
}

template <typename T>
T get_or(const json& j, const std::string& key, const T& dflt) {
  if (!j.contains(key)) return dflt;
  return j.at(key).get<T>();
}

NetSpec net_from_json(const json& j, const std::string& where) {
  NetSpec n;
  check_keys(j, where, {"type", "hidden", "activation", "conv_channels"});
  n.type = get_or<std::string>(j, "type", n.type);
  require(n.type == "mlp" || n.type == "conv",
          "config: " + where + ".type must be 'mlp' or 'conv'");
  n.hidden = get_or<std::vector<Index>>(j, "hidden", n.hidden);
  for (Index h : n.hidden)
    require(h >= 1, "config: " + where + ".hidden entries must be >= 1");
  n.activation = get_or<std::string>(j, "activation", n.activation);
  require(n.activation == "tanh" || n.activation == "relu",
          "config: " + where + ".activation must be 'tanh' or 'relu'");
  n.conv_channels = get_or<std::vector<Index>>(j, "conv_channels", n.conv_channels);
  for (Index c : n.conv_channels)
    require(c >= 1, "config: " + where + ".conv_channels entries must be >= 1");
  return n;
}

json net_to_json(const NetSpec& n) {
  return {{"type", n.type},
          {"hidden", n.hidden},
          {"activation", n.activation},
          {"conv_channels", n.conv_channels}};
}

}  // namespace

RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig c;
  check_keys(j, "<root>", {"name", "seed", "dataset", "model", "optimizer",
                           "evaluation"});
  c.name = get_or<std::string>(j, "name", c.name);
  require(!c.name.empty(), "config: name must be nonempty");
  c.seed = get_or<std::uint64_t>(j, "seed", c.seed);

  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    check_keys(d, "dataset",
               {"kind", "path", "test_path", "ambient_dim", "count",
                "test_count", "noise", "denoise_sigma", "validation_fraction",
                "dequantize", "preprocess", "logit_lambda"});
    auto& ds = c.dataset;
    ds.kind = get_or<std::string>(d, "kind", ds.kind);
    require(ds.kind == "toy-sine" || ds.kind == "toy-circle" ||
                ds.kind == "toy-ribbon" || ds.kind == "idx",
            "config: dataset.kind must be toy-sine|toy-circle|toy-ribbon|idx");
    ds.path = get_or<std::string>(d, "path", ds.path);
    require(ds.kind != "idx" || !ds.path.empty(),
            "config: dataset.path is required for idx datasets");
    ds.test_path = get_or<std::string>(d, "test_path", ds.test_path);
    ds.ambient_dim = get_or<Index>(d, "ambient_dim", ds.ambient_dim);
    require(ds.ambient_dim >= 2, "config: dataset.ambient_dim must be >= 2");
    ds.count = get_or<Index>(d, "count", ds.count);
    require(ds.count >= 10, "config: dataset.count must be >= 10");
    ds.test_count = get_or<Index>(d, "test_count", ds.test_count);
    require(ds.test_count >= 0, "config: dataset.test_count must be >= 0");
    ds.noise = get_or<double>(d, "noise", ds.noise);
    require(ds.noise >= 0.0, "config: dataset.noise must be >= 0");
    ds.denoise_sigma = get_or<double>(d, "denoise_sigma", ds.denoise_sigma);
    require(ds.denoise_sigma >= 0.0, "config: dataset.denoise_sigma must be >= 0");
    ds.validation_fraction =
        get_or<double>(d, "validation_fraction", ds.validation_fraction);
    require(ds.validation_fraction > 0.0 && ds.validation_fraction < 1.0,
            "config: dataset.validation_fraction must lie in (0, 1)");
    ds.dequantize = get_or<bool>(d, "dequantize", ds.dequantize);
    ds.preprocess = get_or<std::string>(d, "preprocess", ds.preprocess);
    require(ds.preprocess == "none" || ds.preprocess == "logit",
            "config: dataset.preprocess must be 'none' or 'logit'");
    ds.logit_lambda = get_or<double>(d, "logit_lambda", ds.logit_lambda);
    require(ds.logit_lambda >= 0.0 && ds.logit_lambda < 0.5,
            "config: dataset.logit_lambda must lie in [0, 0.5)");
  }

  if (j.contains("model")) {
    const json& m = j.at("model");
    check_keys(m, "model",
               {"variant", "latent_dim", "encoder", "decoder", "core_flow",
                "prior_flow", "flow_layers", "flow_hidden",
                "flow_residual_blocks", "flow_activation", "sigma_init"});
    auto& ms = c.model;
    ms.variant = get_or<std::string>(m, "variant", ms.variant);
    require(ms.variant == "aef-linear" || ms.variant == "aef-partitioned-center" ||
                ms.variant == "aef-partitioned-corner" || ms.variant == "vae" ||
                ms.variant == "deterministic-ae",
            "config: model.variant must be one of aef-linear, "
            "aef-partitioned-center, aef-partitioned-corner, vae, "
            "deterministic-ae");
    ms.latent_dim = get_or<Index>(m, "latent_dim", ms.latent_dim);
    require(ms.latent_dim >= 1, "config: model.latent_dim must be >= 1");
    if (m.contains("encoder")) ms.encoder = net_from_json(m.at("encoder"), "model.encoder");
    if (m.contains("decoder")) ms.decoder = net_from_json(m.at("decoder"), "model.decoder");
    ms.core_flow = get_or<bool>(m, "core_flow", ms.core_flow);
    ms.prior_flow = get_or<bool>(m, "prior_flow", ms.prior_flow);
    ms.flow_layers = get_or<Index>(m, "flow_layers", ms.flow_layers);
    require(ms.flow_layers >= 1, "config: model.flow_layers must be >= 1");
    ms.flow_hidden = get_or<Index>(m, "flow_hidden", ms.flow_hidden);
    require(ms.flow_hidden >= 1, "config: model.flow_hidden must be >= 1");
    ms.flow_residual_blocks =
        get_or<Index>(m, "flow_residual_blocks", ms.flow_residual_blocks);
    require(ms.flow_residual_blocks >= 0,
            "config: model.flow_residual_blocks must be >= 0");
    ms.flow_activation = get_or<std::string>(m, "flow_activation", ms.flow_activation);
    require(ms.flow_activation == "tanh" || ms.flow_activation == "relu",
            "config: model.flow_activation must be 'tanh' or 'relu'");
    ms.sigma_init = get_or<double>(m, "sigma_init", ms.sigma_init);
    require(ms.sigma_init > 1e-4, "config: model.sigma_init must exceed 1e-4");
  }

  if (j.contains("optimizer")) {
    const json& o = j.at("optimizer");
    check_keys(o, "optimizer",
               {"lr", "batch_size", "max_iterations", "clip_norm", "patience",
                "eval_interval", "val_max_points"});
    auto& os = c.optimizer;
    os.lr = get_or<double>(o, "lr", os.lr);
    require(os.lr > 0.0, "config: optimizer.lr must be positive");
    os.batch_size = get_or<Index>(o, "batch_size", os.batch_size);
    require(os.batch_size >= 1, "config: optimizer.batch_size must be >= 1");
    os.max_iterations = get_or<long>(o, "max_iterations", os.max_iterations);
    require(os.max_iterations >= 1, "config: optimizer.max_iterations must be >= 1");
    os.clip_norm = get_or<double>(o, "clip_norm", os.clip_norm);
    require(os.clip_norm > 0.0, "config: optimizer.clip_norm must be positive");
    os.patience = get_or<long>(o, "patience", os.patience);
    require(os.patience >= 1, "config: optimizer.patience must be >= 1");
    os.eval_interval = get_or<long>(o, "eval_interval", os.eval_interval);
    require(os.eval_interval >= 1, "config: optimizer.eval_interval must be >= 1");
    os.val_max_points = get_or<Index>(o, "val_max_points", os.val_max_points);
    require(os.val_max_points >= 1, "config: optimizer.val_max_points must be >= 1");
  }

  if (j.contains("evaluation")) {
    const json& e = j.at("evaluation");
    check_keys(e, "evaluation",
               {"is_samples", "is_rounds", "epsilon_grid", "temperature",
                "sample_count"});
    auto& es = c.evaluation;
    es.is_samples = get_or<Index>(e, "is_samples", es.is_samples);
    require(es.is_samples >= 1, "config: evaluation.is_samples must be >= 1");
    es.is_rounds = get_or<Index>(e, "is_rounds", es.is_rounds);
    require(es.is_rounds >= 1, "config: evaluation.is_rounds must be >= 1");
    es.epsilon_grid = get_or<std::vector<double>>(e, "epsilon_grid", es.epsilon_grid);
    for (double g : es.epsilon_grid)
      require(g > 0.0, "config: evaluation.epsilon_grid entries must be positive");
    es.temperature = get_or<double>(e, "temperature", es.temperature);
    require(es.temperature >= 0.0, "config: evaluation.temperature must be >= 0");
    es.sample_count = get_or<Index>(e, "sample_count", es.sample_count);
    require(es.sample_count >= 1, "config: evaluation.sample_count must be >= 1");
  }
  return c;
}

nlohmann::json config_to_json(const RunConfig& c) {
  return {
      {"name", c.name},
      {"seed", c.seed},
      {"dataset",
       {{"kind", c.dataset.kind},
        {"path", c.dataset.path},
        {"test_path", c.dataset.test_path},
        {"ambient_dim", c.dataset.ambient_dim},
        {"count", c.dataset.count},
        {"test_count", c.dataset.test_count},
        {"noise", c.dataset.noise},
        {"denoise_sigma", c.dataset.denoise_sigma},
        {"validation_fraction", c.dataset.validation_fraction},
        {"dequantize", c.dataset.dequantize},
        {"preprocess", c.dataset.preprocess},
        {"logit_lambda", c.dataset.logit_lambda}}},
      {"model",
       {{"variant", c.model.variant},
        {"latent_dim", c.model.latent_dim},
        {"encoder", net_to_json(c.model.encoder)},
        {"decoder", net_to_json(c.model.decoder)},
        {"core_flow", c.model.core_flow},
        {"prior_flow", c.model.prior_flow},
        {"flow_layers", c.model.flow_layers},
        {"flow_hidden", c.model.flow_hidden},
        {"flow_residual_blocks", c.model.flow_residual_blocks},
        {"flow_activation", c.model.flow_activation},
        {"sigma_init", c.model.sigma_init}}},
      {"optimizer",
       {{"lr", c.optimizer.lr},
        {"batch_size", c.optimizer.batch_size},
        {"max_iterations", c.optimizer.max_iterations},
        {"clip_norm", c.optimizer.clip_norm},
        {"patience", c.optimizer.patience},
        {"eval_interval", c.optimizer.eval_interval},
        {"val_max_points", c.optimizer.val_max_points}}},
      {"evaluation",
       {{"is_samples", c.evaluation.is_samples},
        {"is_rounds", c.evaluation.is_rounds},
        {"epsilon_grid", c.evaluation.epsilon_grid},
        {"temperature", c.evaluation.temperature},
        {"sample_count", c.evaluation.sample_count}}}};
}

RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DomainError("config: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DomainError("config: parse error in '" + path + "': " + e.what());
  }
  return config_from_json(j);
}

std::string config_hash(const RunConfig& c) {
  // nlohmann::json keeps keys sorted, so dump() is canonical.
  const std::string s = config_to_json(c).dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

std::string config_resume_hash(const RunConfig& c) {
  RunConfig n = c;
  n.optimizer.max_iterations = 0;
  return config_hash(n);
}

void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  require(eq != std::string::npos,
          "override '" + assignment + "' must have the form path.to.field=value");
  const std::string path = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);

  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    if (dot == std::string::npos) {
      parts.push_back(path.substr(start));
      break;
    }
    parts.push_back(path.substr(start, dot - start));
    start = dot + 1;
  }

  nlohmann::json* node = &doc;
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object() || !node->contains(parts[i]))
      throw DomainError("override: no such field '" + path + "'");
    node = &(*node)[parts[i]];
  }
  const std::string& leaf = parts.back();
  if (!node->is_object() || !node->contains(leaf))
    throw DomainError("override: no such field '" + path + "'");

  nlohmann::json parsed;
  try {
    parsed = nlohmann::json::parse(value);
  } catch (const nlohmann::json::exception&) {
    parsed = value;  // plain string
  }
  nlohmann::json& slot = (*node)[leaf];
  const bool both_numeric = slot.is_number() && parsed.is_number();
  if (!both_numeric && slot.type() != parsed.type()) {
    if (slot.is_string() && !parsed.is_string())
      parsed = value;  // e.g. a numeric-looking name stays a string
    else
      throw DomainError("override: type mismatch for '" + path + "'");
  }
  slot = parsed;
}

std::vector<RunConfig> ablation_matrix(const RunConfig& base) {
  struct Combo {
    bool core, prior;
    const char* suffix;
  };
  const Combo combos[] = {{false, false, "-noflows"},
                          {true, false, "-coreonly"},
                          {false, true, "-prioronly"},
                          {true, true, "-bothflows"}};
  std::vector<RunConfig> out;
  for (const auto& combo : combos) {
    RunConfig c = base;
    c.model.core_flow = combo.core;
    c.model.prior_flow = combo.prior;
    c.name = base.name + combo.suffix;
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace aef::train
