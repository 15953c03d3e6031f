#pragma once

// Instance-level objective: exact-count token masking, the two adaptive
// decoders (shared local decoder for late fusion, learned-query decoder for
// early fusion) and the per-modality Huber reconstruction loss.

#include "jointmotion/encoder.hpp"

#include <array>
#include <cstdint>

namespace jm {

struct MaskSpec {
    std::array<std::vector<uint8_t>, 3> masked; // per modality, aligned with its tokens
    std::array<double, 3> ratio{0.6, 0.6, 0.6};
    uint64_t seed = 0;

    int count(Modality m) const;
};

// floor(ratio * valid_count) tokens per modality, drawn uniformly without
// replacement among valid tokens, independently per modality.
MaskSpec sample_mask(const std::array<std::vector<uint8_t>, 3>& valid, std::array<double, 3> ratio, uint64_t seed);
MaskSpec sample_mask(const std::array<std::vector<uint8_t>, 3>& valid, double ratio, uint64_t seed);

// Masked rows become `mask_token` (1 x D). Also returns the dense attention
// mask under which unmasked tokens cannot see masked ones while masked tokens
// see every token.
struct MaskedSequence {
    TokenSequence tokens;
    std::vector<uint8_t> attn_mask; // N x N
};
MaskedSequence apply_mask(const TokenSequence& tokens, const std::vector<uint8_t>& masked, const Var& mask_token);

enum class LossScope { masked_only, all_valid };

struct MpmConfig {
    std::array<double, 3> lambda{1.0, 1.0, 1.0}; // agent, lane, light
    double huber_delta = 1.0;
    int decoder_depth = 3;
    std::array<double, 3> mask_ratio{0.6, 0.6, 0.6};
    LossScope scope = LossScope::masked_only;
};

using Reconstruction = std::array<Var, 3>;      // per modality, rows aligned with tokens
using ReconstructionTarget = std::array<Tensor, 3>;

struct MpmLosses {
    Var total;
    std::array<Var, 3> per_modality;
};

// Shared pieces: per-modality mask tokens and reconstruction heads.
class MpmHeads {
public:
    MpmHeads() = default;
    MpmHeads(ParameterStore& store, const DatasetDialect& dialect, int width, Rng& rng);
    const Var& mask_token(Modality m) const { return mask_tokens_[static_cast<int>(m)]; }
    // Splits a concatenated decoder output back into modalities.
    Reconstruction project(const Var& decoded, const std::vector<Modality>& modality) const;

private:
    std::array<Var, 3> mask_tokens_;
    std::array<Linear, 3> heads_;
    std::array<std::vector<double>, 3> scales_;
};

// Local-attention blocks over H_A ++ H_L ++ H_TL, then per-modality heads.
class LateFusionDecoder {
public:
    LateFusionDecoder() = default;
    LateFusionDecoder(ParameterStore& store, const TransformerConfig& config, Rng& rng);
    TokenSequence decode(const LateFusionEmbeddings& h) const;

private:
    LocalTransformer blocks_;
};

// One query per input token (learned per-modality base plus a sinusoid of
// its positions_1d) cross-attends to the latents, then local self-attention
// among the queries.
class EarlyFusionDecoder {
public:
    EarlyFusionDecoder() = default;
    EarlyFusionDecoder(ParameterStore& store, const TransformerConfig& config, Rng& rng);
    TokenSequence decode(const EarlyFusionLatent& latent) const;

private:
    int width_ = 0;
    std::array<Var, 3> query_base_;
    CrossAttentionBlock cross_;
    LocalTransformer blocks_;
};

// Each modality term is the mean elementwise Huber over its selected tokens
// (masked ones, or all valid ones for LossScope::all_valid), zero when none.
MpmLosses mpm_loss(const Reconstruction& recon, const ReconstructionTarget& target, const MaskSpec& spec,
                   const std::array<std::vector<uint8_t>, 3>& valid, const MpmConfig& config);

} // namespace jm
