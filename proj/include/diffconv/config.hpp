#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>

#include "diffconv/network.hpp"

namespace diffconv {

/// One run's full resolved configuration: model, optimizer, and dataset.
struct AppConfig {
  NetworkConfig network;
  TrainConfig train;

  std::string dataset = "synth";  // "synth" or a label-manifest CSV path
  int n_per_class = 100;
  int points_per_cloud = 256;
  std::uint64_t data_seed = 7;
  std::string data_root;  // optional prefix for manifest-relative paths
};

/// key = value lines; '#' starts a comment; unknown keys are an error carrying
/// the line number. Later lines override earlier ones ('input_points' resets
/// the stage point schedule, an explicit 'stage_point_counts' re-overrides it).
AppConfig parse_config(std::istream& in);
AppConfig parse_config_file(const std::string& path);

/// Canonical text form: parse(dump(c)) == c, and dump is the hash input.
std::string dump_config(const AppConfig& cfg);

std::uint64_t fnv1a64(std::string_view bytes);
std::string config_hash(const AppConfig& cfg);  // 16 hex digits over dump_config

}  // namespace diffconv
