#pragma once

#include <json.hpp>

#include "bayesprompt/prompt_synthesis.hpp"

namespace bayesprompt::detail {

nlohmann::json pack_metadata(const PromptPack& pack);
Eigen::MatrixXd pack_rows(const PromptPack& pack);
PromptPack pack_from(const Eigen::MatrixXd& rows, const nlohmann::json& meta);

nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const nlohmann::json& j, const std::filesystem::path& path);

}  // namespace bayesprompt::detail

namespace bayesprompt {
struct F1Metrics;
}

namespace bayesprompt::detail {
nlohmann::json metrics_to_json(const F1Metrics& metrics);
}  // namespace bayesprompt::detail
