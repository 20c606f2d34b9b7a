#pragma once

#include <filesystem>

#include "protoseg/tensor.hpp"

namespace protoseg::io {

// Episode fixture layout:
//   episode.json   {"class_id", "supports": [{"features", "mask"}], "unlabeled": [...],
//                   "query", "query_truth"}   (paths relative to the directory)
//   <tensor dirs>  one interchange tensor directory per entry

inline constexpr const char* kEpisodeFile = "episode.json";

void save_episode(const std::filesystem::path& dir, const Episode& episode);

/// Loads and validates a fixture. Missing files, dtype or shape problems and
/// channel disagreements raise FormatError/DimensionError naming the file.
Episode load_episode(const std::filesystem::path& dir);

} // namespace protoseg::io
