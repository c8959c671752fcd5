#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"

#include "xhved/trainer.hpp"

namespace xhved::cli {

/// Keys mirror the TrainConfig field names. Unknown keys and mistyped
/// values raise ParseError naming the key; missing keys keep defaults.
TrainConfig parse_train_config(const nlohmann::json& j);
TrainConfig load_train_config(const std::filesystem::path& path);
nlohmann::json to_json(const TrainConfig& c);

}  // namespace xhved::cli
