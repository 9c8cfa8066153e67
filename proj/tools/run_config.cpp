#include "run_config.hpp"

#include <fstream>
#include <sstream>

namespace cvc::cli {
namespace {

using Json = nlohmann::json;

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  std::istringstream is(v);
  T out{};
  is >> out;
  if (is.fail() || !is.eof()) throw ConfigError("'" + key + "': cannot parse '" + v + "'");
  return out;
}

std::vector<double> parse_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<double>(key, item));
  return out;
}

std::string list_text(const std::vector<double>& v) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

void set_train(TrainConfig& t, const std::string& section, const std::string& field, const std::string& v) {
  const std::string key = section + "." + field;
  if (field == "lr") t.lr = parse_number<double>(key, v);
  else if (field == "warmup") t.warmup = parse_number<std::size_t>(key, v);
  else if (field == "steps") t.steps = parse_number<std::size_t>(key, v);
  else if (field == "batch") t.batch = parse_number<std::size_t>(key, v);
  else if (field == "weight_decay") t.weight_decay = parse_number<double>(key, v);
  else if (field == "lambda") t.lambda = parse_number<double>(key, v);
  else if (field == "beta") t.beta = parse_number<double>(key, v);
  else if (field == "clip") t.clip = parse_number<double>(key, v);
  else if (field == "seed") t.seed = parse_number<std::uint64_t>(key, v);
  else if (field == "checkpoint_every") t.checkpoint_every = parse_number<std::size_t>(key, v);
  else if (field == "validate_every") t.validate_every = parse_number<std::size_t>(key, v);
  else throw ConfigError("unknown config key '" + key + "'");
}

Json train_json(const TrainConfig& t) {
  return Json{{"lr", t.lr},
              {"warmup", t.warmup},
              {"steps", t.steps},
              {"batch", t.batch},
              {"weight_decay", t.weight_decay},
              {"lambda", t.lambda},
              {"beta", t.beta},
              {"clip", t.clip},
              {"seed", t.seed},
              {"checkpoint_every", t.checkpoint_every},
              {"validate_every", t.validate_every}};
}

std::string scalar_text(const Json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_array()) {
    std::vector<double> d;
    for (const auto& e : v) d.push_back(e.get<double>());
    return list_text(d);
  }
  if (v.is_number_float()) {
    std::ostringstream os;
    os.precision(17);
    os << v.get<double>();
    return os.str();
  }
  return v.dump();
}

}  // namespace

RunConfig::RunConfig() {
  pretrain.phase = Phase::pretrain;
  pretrain.lr = 1e-3;
  pretrain.steps = 1500;
  pretrain.warmup = 150;
  pretrain.validate_every = 250;
  pretrain.checkpoint_every = 250;
  finetune.phase = Phase::finetune;
  finetune.lr = 1e-3;
  finetune.steps = 1500;
  finetune.warmup = 150;
  finetune.validate_every = 250;
  finetune.checkpoint_every = 250;
  sweep = finetune;
  sweep.phase = Phase::joint;
  sweep.lr = 5e-4;
  sweep.steps = 800;
  sweep.warmup = 80;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto dot = key.find('.');
  if (dot == std::string::npos) throw ConfigError("config key '" + key + "' needs a section prefix");
  const auto section = key.substr(0, dot), field = key.substr(dot + 1);
  if (section == "model") {
    model.set(field, value);
  } else if (section == "pretrain") {
    set_train(pretrain, section, field, value);
  } else if (section == "finetune") {
    set_train(finetune, section, field, value);
  } else if (section == "sweep") {
    if (field == "lambdas") sweep_lambdas = parse_list(key, value);
    else set_train(sweep, section, field, value);
  } else if (section == "data") {
    if (field == "seed") data.seed = parse_number<std::uint64_t>(key, value);
    else if (field == "channels") data.channels = parse_number<std::size_t>(key, value);
    else if (field == "height") data.height = parse_number<std::size_t>(key, value);
    else if (field == "width") data.width = parse_number<std::size_t>(key, value);
    else if (field == "slopes") data.slopes = parse_list(key, value);
    else if (field == "lat_amplitude") data.lat_amplitude = parse_number<double>(key, value);
    else if (field == "coupling") data.coupling = parse_list(key, value);
    else if (field == "anomaly_rate") data.anomaly_rate = parse_number<double>(key, value);
    else if (field == "anomaly_scale") data.anomaly_scale = parse_number<double>(key, value);
    else if (field == "storm_track") data.storm_track = parse_number<double>(key, value);
    else if (field == "train") data.train = parse_number<std::size_t>(key, value);
    else if (field == "val") data.val = parse_number<std::size_t>(key, value);
    else if (field == "test") data.test = parse_number<std::size_t>(key, value);
    else throw ConfigError("unknown config key '" + key + "'");
  } else {
    throw ConfigError("unknown config section '" + section + "'");
  }
}

void RunConfig::apply_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
  for (const auto& [section, body] : j.items()) {
    if (section == "seed") {
      set_seed(body.get<std::uint64_t>());
      continue;
    }
    if (!body.is_object()) throw ConfigError("config section '" + section + "' must be an object");
    for (const auto& [field, value] : body.items()) set(section + "." + field, scalar_text(value));
  }
}

Json RunConfig::to_json() const {
  Json m = Json::object();
  std::istringstream is(model.to_text());
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) m[line.substr(0, eq)] = line.substr(eq + 1);
  }
  Json sw = train_json(sweep);
  sw["lambdas"] = sweep_lambdas;
  return Json{{"data",
               {{"seed", data.seed},
                {"channels", data.channels},
                {"height", data.height},
                {"width", data.width},
                {"slopes", data.slopes},
                {"lat_amplitude", data.lat_amplitude},
                {"coupling", data.coupling},
                {"anomaly_rate", data.anomaly_rate},
                {"anomaly_scale", data.anomaly_scale},
                {"storm_track", data.storm_track},
                {"train", data.train},
                {"val", data.val},
                {"test", data.test}}},
              {"model", m},
              {"pretrain", train_json(pretrain)},
              {"finetune", train_json(finetune)},
              {"sweep", sw}};
}

void RunConfig::set_seed(std::uint64_t seed) {
  data.seed = seed;
  model.seed = seed;
  pretrain.seed = finetune.seed = sweep.seed = seed;
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
  RunConfig rc;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config file " + path);
    Json j;
    try {
      j = Json::parse(in);
    } catch (const Json::parse_error& e) {
      throw ConfigError(path + ": " + e.what());
    }
    rc.apply_json(j);
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + o + "' is not key=value");
    rc.set(o.substr(0, eq), o.substr(eq + 1));
  }
  return rc;
}

}  // namespace cvc::cli
