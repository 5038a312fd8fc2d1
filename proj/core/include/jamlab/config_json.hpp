#pragma once

#include <nlohmann/json.hpp>

#include "jamlab/dataset_io.hpp"
#include "jamlab/signal.hpp"
#include "jamlab/spectral.hpp"

// JSON forms of the configuration structs. Readers reject unknown keys with
// ConfigError and keep defaults for missing ones.
namespace jamlab {

void to_json(nlohmann::json& j, const SampleClock& c);
void from_json(const nlohmann::json& j, SampleClock& c);

void to_json(nlohmann::json& j, WindowKind k);
void from_json(const nlohmann::json& j, WindowKind& k);

void to_json(nlohmann::json& j, const WelchConfig& c);
void from_json(const nlohmann::json& j, WelchConfig& c);

void to_json(nlohmann::json& j, const FeatureConfig& c);
void from_json(const nlohmann::json& j, FeatureConfig& c);

void to_json(nlohmann::json& j, const DrawRanges& c);
void from_json(const nlohmann::json& j, DrawRanges& c);

void to_json(nlohmann::json& j, const DatasetGrid& c);
void from_json(const nlohmann::json& j, DatasetGrid& c);

void to_json(nlohmann::json& j, const GenerationConfig& c);
void from_json(const nlohmann::json& j, GenerationConfig& c);

/// Object-shape check used by every reader: throws ConfigError naming `where`
/// and the first key not listed in `allowed`.
void require_known_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const char* where);

}  // namespace jamlab
