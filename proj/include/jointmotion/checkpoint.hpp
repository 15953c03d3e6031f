#pragma once

// Checkpoint format, version 1:
//
//   jointmotion-checkpoint v1
//   meta <key> <value>          (zero or more, sorted by key)
//   params <count>
//   <dotted.name> [rows,cols] <row-major values>
//   end
//
// Parameters appear sorted by name, so saving the same store twice gives the
// same bytes.

#include "jointmotion/nn.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace jm {

struct Checkpoint {
    std::map<std::string, std::string> meta;
    std::map<std::string, Tensor> params;
};

Checkpoint snapshot(const ParameterStore& store, std::map<std::string, std::string> meta = {});
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& text, const std::string& source = "<checkpoint>");
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Name-based loading into a fine-tuning store. Every checkpoint entry and
// every store parameter ends up in exactly one list.
struct LoadReport {
    std::vector<std::string> loaded;        // copied by name
    std::vector<std::string> dropped;       // pre-training-only groups (cme.*, mpm.*)
    std::vector<std::string> reinitialized; // input-width-dependent embeddings with a new shape
    std::vector<std::string> fresh;         // head.* parameters absent from the checkpoint
    std::vector<std::string> frozen;        // always empty: nothing is frozen

    std::string summary() const;
};

bool is_pretraining_only(const std::string& name);
bool is_input_width_dependent(const std::string& name);

// Throws DataError for anything outside the rules above: unknown checkpoint
// entries, shape changes outside the embedding weights, or store parameters
// (other than head.*) missing from the checkpoint.
LoadReport load_parameters(ParameterStore& store, const Checkpoint& ckpt);

} // namespace jm
