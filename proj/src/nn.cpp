#include "jointmotion/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace jm {

Var ParameterStore::add(const std::string& name, Tensor init) {
    if (params_.count(name)) throw std::logic_error("duplicate parameter '" + name + "'");
    Var v(std::move(init), true);
    params_.emplace(name, v);
    return v;
}

Var ParameterStore::get(const std::string& name) const {
    const auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
    return it->second;
}

std::vector<std::string> ParameterStore::names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& [name, _] : params_) out.push_back(name);
    return out;
}

size_t ParameterStore::scalar_count() const {
    size_t n = 0;
    for (const auto& [_, v] : params_) n += v.value().size();
    return n;
}

void ParameterStore::zero_grad() {
    for (auto& [_, v] : params_) {
        Var handle = v;
        handle.zero_grad();
    }
}

Tensor uniform_fan_in(Rng& rng, int fan_in, int fan_out) {
    Tensor t(fan_in, fan_out);
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(fan_in, 1)));
    for (double& x : t.flat()) x = rng.uniform(-bound, bound);
    return t;
}

Linear::Linear(ParameterStore& store, const std::string& prefix, int in, int out, Rng& rng, bool with_bias) {
    weight = store.add(prefix + ".weight", uniform_fan_in(rng, in, out));
    if (with_bias) bias = store.add(prefix + ".bias", Tensor(1, out));
}

LayerNorm::LayerNorm(ParameterStore& store, const std::string& prefix, int width) {
    gain = store.add(prefix + ".gain", Tensor(1, width, 1.0));
    bias = store.add(prefix + ".bias", Tensor(1, width));
}

FeedForward::FeedForward(ParameterStore& store, const std::string& prefix, int width, int hidden, Rng& rng)
    : up(store, prefix + ".up", width, hidden, rng), down(store, prefix + ".down", hidden, width, rng) {}

MultiHeadAttention::MultiHeadAttention(ParameterStore& store, const std::string& prefix, int width, int heads_, Rng& rng)
    : heads(heads_),
      q(store, prefix + ".q", width, width, rng),
      k(store, prefix + ".k", width, width, rng),
      v(store, prefix + ".v", width, width, rng),
      o(store, prefix + ".o", width, width, rng) {
    if (heads < 1 || width % heads != 0)
        throw std::invalid_argument("attention width " + std::to_string(width) + " not divisible by heads");
}

Var MultiHeadAttention::operator()(const Var& queries, const Var& keys, const std::vector<uint8_t>& allowed,
                                   const std::vector<int>& q_positions, const std::vector<int>& k_positions) const {
    ops::AttentionOptions opts;
    opts.heads = heads;
    opts.allowed = allowed;
    opts.q_positions = q_positions;
    opts.k_positions = k_positions;
    return o(ops::attention(q(queries), k(keys), v(keys), opts));
}

SelfAttentionBlock::SelfAttentionBlock(ParameterStore& store, const std::string& prefix, int width, int heads,
                                       int ff_hidden, Rng& rng)
    : norm_attn(store, prefix + ".norm_attn", width),
      norm_ff(store, prefix + ".norm_ff", width),
      attn(store, prefix + ".attn", width, heads, rng),
      ff(store, prefix + ".ff", width, ff_hidden, rng) {}

Var SelfAttentionBlock::operator()(const Var& x, const std::vector<uint8_t>& allowed,
                                   const std::vector<int>& positions) const {
    const Var h = norm_attn(x);
    const Var y = ops::add(x, attn(h, h, allowed, positions, positions));
    return ops::add(y, ff(norm_ff(y)));
}

CrossAttentionBlock::CrossAttentionBlock(ParameterStore& store, const std::string& prefix, int width, int heads,
                                         int ff_hidden, Rng& rng)
    : norm_q(store, prefix + ".norm_q", width),
      norm_kv(store, prefix + ".norm_kv", width),
      norm_ff(store, prefix + ".norm_ff", width),
      attn(store, prefix + ".attn", width, heads, rng),
      ff(store, prefix + ".ff", width, ff_hidden, rng) {}

Var CrossAttentionBlock::operator()(const Var& queries, const Var& context, const std::vector<uint8_t>& allowed) const {
    const Var y = ops::add(queries, attn(norm_q(queries), norm_kv(context), allowed));
    return ops::add(y, ff(norm_ff(y)));
}

} // namespace jm
