#include "config_json.hpp"

#include <fstream>

#include "xhved/errors.hpp"

namespace xhved::cli {

using nlohmann::json;

namespace {

template <typename T>
T get_as(const json& v, const std::string& key) {
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ParseError(key, "expected a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0))
        throw ParseError(key, "expected a non-negative integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ParseError(key, "expected a number");
    } else {
      if (!v.is_string()) throw ParseError(key, "expected a string");
    }
    return v.get<T>();
  } catch (const json::exception& e) {
    throw ParseError(key, e.what());
  }
}

}  // namespace

TrainConfig parse_train_config(const json& j) {
  if (!j.is_object()) throw ParseError("config", "top level must be a JSON object");
  TrainConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "batch_size") c.batch_size = get_as<std::size_t>(v, key);
    else if (key == "learning_rate") c.learning_rate = get_as<double>(v, key);
    else if (key == "lambda_rec") c.lambda_rec = get_as<double>(v, key);
    else if (key == "lambda_kl") c.lambda_kl = get_as<double>(v, key);
    else if (key == "pretrain_steps") c.pretrain_steps = get_as<std::size_t>(v, key);
    else if (key == "train_steps") c.train_steps = get_as<std::size_t>(v, key);
    else if (key == "seed") c.seed = get_as<std::uint64_t>(v, key);
    else if (key == "subset_strategy") {
      const auto s = get_as<std::string>(v, key);
      try {
        c.subset_strategy = parse_strategy(s);
      } catch (const ContractViolation&) {
        throw ParseError(key, "expected uniform15 or full_only, got '" + s + "'");
      }
    } else if (key == "save_attention") c.save_attention = get_as<bool>(v, key);
    else if (key == "vila") c.vila = get_as<bool>(v, key);
    else if (key == "sfeca") c.sfeca = get_as<bool>(v, key);
    else throw ParseError(key, "unknown config field");
  }
  return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError("config", e.what());
  }
  return parse_train_config(j);
}

json to_json(const TrainConfig& c) {
  return json{{"batch_size", c.batch_size},
              {"learning_rate", c.learning_rate},
              {"lambda_rec", c.lambda_rec},
              {"lambda_kl", c.lambda_kl},
              {"pretrain_steps", c.pretrain_steps},
              {"train_steps", c.train_steps},
              {"seed", c.seed},
              {"subset_strategy", std::string(strategy_name(c.subset_strategy))},
              {"save_attention", c.save_attention},
              {"vila", c.vila},
              {"sfeca", c.sfeca}};
}

}  // namespace xhved::cli
