#pragma once

// Text scene format, version 1:
//
//   jointmotion-scene v1
//   scene id=<id> dt=<dt> dialect=<name> t_past=<n> t_future=<n> lights=<0|1> lane_classes=<n>
//   counts agents=<n> lanes=<n> lights=<n>
//   agent id=<id>
//   class_onehot [3] ...
//   position [T,2] ...
//   dims [T,3] ...
//   accel [T,2] ...
//   vel [T,2] ...
//   yaw [T] ...
//   step_onehot [T,T] ...
//   valid [T] ...
//   future_position [F,2] ...
//   future_valid [F] ...
//   lane id=<id>
//   points [P,2] ...
//   class_onehot [C] ...
//   light id=<id>
//   position [2] ...
//   state_onehot [T,3] ...
//   step_onehot [T,T] ...
//   end
//
// Agent blocks come first, then lanes, then lights. Numbers are written in
// shortest round-trip form so decoding reproduces every double exactly.

#include "jointmotion/scene.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace jm {

inline constexpr int kSceneFormatVersion = 1;

std::string serialize_scene(const TrafficScene& scene);
// Throws FormatError (version_mismatch, malformed_field or shape_mismatch).
TrafficScene deserialize_scene(const std::string& text, const std::string& source = "<scene>");

struct CorpusEntry {
    std::string scene_id;
    uint64_t seed = 0;
    std::string file;
};

struct CorpusManifest {
    DatasetDialect dialect;
    int agents = 0;
    int lanes = 0;
    int lights = 0;
    std::vector<CorpusEntry> entries;
};

// Writes <dir>/manifest.txt plus one scene file per entry. Refuses to touch
// an existing manifest unless overwrite is set (DataError).
void write_corpus(const std::filesystem::path& dir, const std::vector<TrafficScene>& scenes,
                  const std::vector<uint64_t>& seeds, bool overwrite);
CorpusManifest read_manifest(const std::filesystem::path& dir);
// Loads every scene listed in the manifest and checks its dialect.
std::vector<TrafficScene> read_corpus(const std::filesystem::path& dir, CorpusManifest* manifest = nullptr);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

} // namespace jm
