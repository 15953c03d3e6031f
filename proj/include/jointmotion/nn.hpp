#pragma once

// Parameter registry and the layers built on it. Parameters are leaf Vars
// keyed by dotted path; layers hold Var handles into the store, so updating a
// store entry in place updates every layer that uses it.

#include "jointmotion/ops.hpp"
#include "jointmotion/rng.hpp"

#include <map>
#include <string>
#include <vector>

namespace jm {

class ParameterStore {
public:
    // Registers a new trainable parameter; duplicate names throw.
    Var add(const std::string& name, Tensor init);
    Var get(const std::string& name) const;
    bool contains(const std::string& name) const { return params_.count(name) != 0; }

    // Sorted by name.
    const std::map<std::string, Var>& all() const { return params_; }
    std::vector<std::string> names() const;
    size_t scalar_count() const;
    void zero_grad();

private:
    std::map<std::string, Var> params_;
};

Tensor uniform_fan_in(Rng& rng, int fan_in, int fan_out);

struct Linear {
    Var weight; // in x out
    Var bias;   // 1 x out

    Linear() = default;
    Linear(ParameterStore& store, const std::string& prefix, int in, int out, Rng& rng, bool with_bias = true);
    Var operator()(const Var& x) const { return ops::linear(x, weight, bias); }
    int in() const { return weight.rows(); }
    int out() const { return weight.cols(); }
};

struct LayerNorm {
    Var gain;
    Var bias;

    LayerNorm() = default;
    LayerNorm(ParameterStore& store, const std::string& prefix, int width);
    Var operator()(const Var& x) const { return ops::layer_norm(x, gain, bias); }
};

struct FeedForward {
    Linear up;
    Linear down;

    FeedForward() = default;
    FeedForward(ParameterStore& store, const std::string& prefix, int width, int hidden, Rng& rng);
    Var operator()(const Var& x) const { return down(ops::gelu(up(x))); }
};

struct MultiHeadAttention {
    int heads = 1;
    Linear q, k, v, o;

    MultiHeadAttention() = default;
    MultiHeadAttention(ParameterStore& store, const std::string& prefix, int width, int heads, Rng& rng);
    // allowed is query-major (nq x nk); positions empty disables rotary.
    Var operator()(const Var& queries, const Var& keys, const std::vector<uint8_t>& allowed,
                   const std::vector<int>& q_positions = {}, const std::vector<int>& k_positions = {}) const;
};

// Pre-norm block: x + Attn(LN(x)) then x + FF(LN(x)).
struct SelfAttentionBlock {
    LayerNorm norm_attn, norm_ff;
    MultiHeadAttention attn;
    FeedForward ff;

    SelfAttentionBlock() = default;
    SelfAttentionBlock(ParameterStore& store, const std::string& prefix, int width, int heads, int ff_hidden, Rng& rng);
    Var operator()(const Var& x, const std::vector<uint8_t>& allowed, const std::vector<int>& positions) const;
};

// Pre-norm cross block: queries attend to a separately normalized context.
struct CrossAttentionBlock {
    LayerNorm norm_q, norm_kv, norm_ff;
    MultiHeadAttention attn;
    FeedForward ff;

    CrossAttentionBlock() = default;
    CrossAttentionBlock(ParameterStore& store, const std::string& prefix, int width, int heads, int ff_hidden, Rng& rng);
    Var operator()(const Var& queries, const Var& context, const std::vector<uint8_t>& allowed) const;
};

} // namespace jm
