#include "jointmotion/mpm.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace jm {

int MaskSpec::count(Modality m) const {
    int n = 0;
    for (auto v : masked[static_cast<int>(m)]) n += v ? 1 : 0;
    return n;
}

MaskSpec sample_mask(const std::array<std::vector<uint8_t>, 3>& valid, std::array<double, 3> ratio, uint64_t seed) {
    MaskSpec spec;
    spec.ratio = ratio;
    spec.seed = seed;
    for (int m = 0; m < kModalityCount; ++m) {
        if (!(ratio[m] >= 0.0 && ratio[m] < 1.0)) throw std::invalid_argument("mask ratio must lie in [0, 1)");
        const auto& v = valid[m];
        spec.masked[m].assign(v.size(), 0);
        std::vector<int> candidates;
        for (size_t i = 0; i < v.size(); ++i)
            if (v[i]) candidates.push_back(static_cast<int>(i));
        const int k = static_cast<int>(std::floor(ratio[m] * static_cast<double>(candidates.size())));
        Rng rng(derive_seed(seed, 0x3a5c, static_cast<uint64_t>(m)));
        // Partial Fisher-Yates: the first k slots are a uniform k-subset.
        for (int i = 0; i < k; ++i) {
            const size_t j = i + rng.below(candidates.size() - i);
            std::swap(candidates[i], candidates[j]);
            spec.masked[m][candidates[i]] = 1;
        }
    }
    return spec;
}

MaskSpec sample_mask(const std::array<std::vector<uint8_t>, 3>& valid, double ratio, uint64_t seed) {
    return sample_mask(valid, {ratio, ratio, ratio}, seed);
}

MaskedSequence apply_mask(const TokenSequence& tokens, const std::vector<uint8_t>& masked, const Var& mask_token) {
    const size_t n = tokens.valid.size();
    if (masked.size() != n)
        throw std::invalid_argument("apply_mask: spec has " + std::to_string(masked.size()) + " entries for " +
                                    std::to_string(n) + " tokens");
    MaskedSequence out;
    out.attn_mask.assign(n * n, 1);
    bool any = false;
    for (size_t j = 0; j < n; ++j) {
        if (!masked[j]) continue;
        any = true;
        for (size_t i = 0; i < n; ++i)
            if (!masked[i]) out.attn_mask[i * n + j] = 0;
    }
    out.tokens = any ? with_tokens(tokens, ops::replace_rows(tokens.tokens, masked, mask_token)) : tokens;
    return out;
}

MpmHeads::MpmHeads(ParameterStore& store, const DatasetDialect& dialect, int width, Rng& rng) {
    for (int m = 0; m < kModalityCount; ++m) {
        const auto mod = static_cast<Modality>(m);
        const std::string name = modality_name(mod);
        Tensor init(1, width);
        for (double& x : init.flat()) x = rng.normal() * 0.02;
        mask_tokens_[m] = store.add("mpm.mask_token." + name, std::move(init));
        heads_[m] = Linear(store, "mpm.head." + name, width, feature_width(mod, dialect), rng);
        scales_[m] = feature_scale(mod, dialect);
    }
}

Reconstruction MpmHeads::project(const Var& decoded, const std::vector<Modality>& modality) const {
    Reconstruction out;
    std::array<std::vector<int>, 3> rows;
    for (size_t i = 0; i < modality.size(); ++i) rows[static_cast<int>(modality[i])].push_back(static_cast<int>(i));
    for (int m = 0; m < kModalityCount; ++m) {
        if (rows[m].empty()) out[m] = ops::constant(Tensor(0, heads_[m].out()));
        else {
            const Var raw = heads_[m](ops::gather_rows(decoded, rows[m]));
            out[m] = ops::mul(raw, ops::constant(scale_rows(Tensor(raw.rows(), raw.cols(), 1.0), scales_[m], false)));
        }
    }
    return out;
}

LateFusionDecoder::LateFusionDecoder(ParameterStore& store, const TransformerConfig& config, Rng& rng)
    : blocks_(store, "mpm.late.decoder", config, rng) {}

TokenSequence LateFusionDecoder::decode(const LateFusionEmbeddings& h) const {
    const int width = blocks_.config().width;
    return blocks_.encode(concat_sequences({&h.agents, &h.lanes, &h.lights}, width));
}

EarlyFusionDecoder::EarlyFusionDecoder(ParameterStore& store, const TransformerConfig& config, Rng& rng)
    : width_(config.width),
      cross_(store, "mpm.early.cross", config.width, config.heads, config.ff_hidden, rng),
      blocks_(store, "mpm.early.decoder", config, rng) {
    for (int m = 0; m < kModalityCount; ++m) {
        Tensor init(1, config.width);
        for (double& x : init.flat()) x = rng.normal() * 0.02;
        query_base_[m] = store.add(std::string("mpm.early.query.") + modality_name(static_cast<Modality>(m)),
                                   std::move(init));
    }
}

TokenSequence EarlyFusionDecoder::decode(const EarlyFusionLatent& latent) const {
    const int n = latent.input_count;
    if (static_cast<int>(latent.modality.size()) != n || static_cast<int>(latent.positions_1d.size()) != n ||
        static_cast<int>(latent.valid.size()) != n)
        throw std::invalid_argument("early fusion decoder: bookkeeping does not match input count");
    if (latent.latent.cols() != width_) throw std::invalid_argument("early fusion decoder: latent width mismatch");

    std::vector<Var> bases;
    bases.reserve(n);
    for (int i = 0; i < n; ++i) bases.push_back(query_base_[static_cast<int>(latent.modality[i])]);
    const Var queries =
        ops::add(ops::concat_rows(bases, width_), ops::constant(sinusoid_encoding(latent.positions_1d, width_)));
    Var x = cross_(queries, latent.latent, {});

    TokenSequence s;
    s.modality = latent.modality;
    s.polyline_id = latent.polyline_id;
    s.within_index = latent.within_index;
    s.positions_1d = latent.positions_1d;
    // Every query is decoded, including ones for padded inputs.
    s.valid.assign(n, 1);
    s.tokens = x;
    return blocks_.encode(s);
}

MpmLosses mpm_loss(const Reconstruction& recon, const ReconstructionTarget& target, const MaskSpec& spec,
                   const std::array<std::vector<uint8_t>, 3>& valid, const MpmConfig& config) {
    MpmLosses out;
    Var total;
    for (int m = 0; m < kModalityCount; ++m) {
        if (recon[m].rows() != target[m].rows() || recon[m].cols() != target[m].cols())
            throw std::invalid_argument(std::string("mpm_loss: ") + modality_name(static_cast<Modality>(m)) +
                                        " reconstruction " + recon[m].value().shape_string() + " vs target " +
                                        target[m].shape_string());
        const auto& mask = spec.masked[m];
        if (mask.size() != static_cast<size_t>(target[m].rows()) || valid[m].size() != mask.size())
            throw std::invalid_argument("mpm_loss: mask misaligned with targets");
        std::vector<uint8_t> rows(mask.size());
        for (size_t i = 0; i < rows.size(); ++i)
            rows[i] = config.scope == LossScope::masked_only ? mask[i] : valid[m][i];
        out.per_modality[m] = ops::huber_mean(recon[m], target[m], rows, config.huber_delta);
        const Var term = ops::scale(out.per_modality[m], config.lambda[m]);
        total = total.defined() ? ops::add(total, term) : term;
    }
    out.total = total;
    return out;
}

} // namespace jm
