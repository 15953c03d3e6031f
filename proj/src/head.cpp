#include "jointmotion/head.hpp"

#include "jointmotion/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace jm {

JointPrediction::JointPrediction(int k_, int agents_, int steps_)
    : k(k_), agents(agents_), steps(steps_), positions(static_cast<size_t>(k_) * agents_ * steps_ * 2, 0.0),
      confidences(k_, k_ > 0 ? 1.0 / k_ : 0.0) {}

JointPrediction JointPredictionVars::to_prediction() const {
    JointPrediction p(k, agents, steps);
    std::copy(trajectories.value().data(), trajectories.value().data() + trajectories.value().size(),
              p.positions.begin());
    for (int m = 0; m < k; ++m) p.confidences[m] = std::exp(log_conf.value()(0, m));
    return p;
}

JointHead::JointHead(ParameterStore& store, const HeadConfig& config, int width, int heads, int ff_hidden,
                     int t_future, Rng& rng)
    : config_(config), t_future_(t_future) {
    if (config.k < 1) throw std::invalid_argument("head: k must be >= 1");
    if (!(config.redundancy_threshold > 0.0)) throw std::invalid_argument("head: redundancy threshold must be > 0");
    Tensor init(config.k, width);
    for (double& x : init.flat()) x = rng.normal() * 0.5;
    anchors_ = store.add("head.anchors", std::move(init));
    cross_ = CrossAttentionBlock(store, "head.cross", width, heads, ff_hidden, rng);
    interact_ = SelfAttentionBlock(store, "head.interact", width, heads, ff_hidden, rng);
    traj_ = Linear(store, "head.traj", width, t_future * 2, rng);
    conf_ = Linear(store, "head.conf", width, 1, rng);
}

JointPredictionVars JointHead::decode(const Var& context, const std::vector<uint8_t>& context_valid,
                                      const AgentQueryInputs& agents) const {
    const int n = agents.summaries.defined() ? agents.summaries.rows() : 0;
    if (n == 0 || static_cast<int>(agents.last_positions.size()) != n ||
        static_cast<int>(agents.frame_rotation.size()) != n)
        throw std::invalid_argument("joint head: missing or inconsistent agent bookkeeping");
    if (context_valid.size() != static_cast<size_t>(context.rows()))
        throw std::invalid_argument("joint head: context validity misaligned");
    const int k = config_.k, width = anchors_.cols(), nq = k * n, nk = context.rows();

    // query (m, a) = anchor_m + summary_a
    std::vector<int> mode_of(nq), agent_of(nq);
    for (int m = 0; m < k; ++m)
        for (int a = 0; a < n; ++a) {
            mode_of[m * n + a] = m;
            agent_of[m * n + a] = a;
        }
    const Var queries = ops::add(ops::gather_rows(anchors_, mode_of), ops::gather_rows(agents.summaries, agent_of));

    std::vector<uint8_t> cross_allowed(static_cast<size_t>(nq) * nk);
    for (int i = 0; i < nq; ++i)
        std::copy(context_valid.begin(), context_valid.end(), cross_allowed.begin() + static_cast<size_t>(i) * nk);
    Var x = cross_(queries, context, cross_allowed);

    std::vector<uint8_t> same_mode(static_cast<size_t>(nq) * nq);
    for (int i = 0; i < nq; ++i)
        for (int j = 0; j < nq; ++j) same_mode[static_cast<size_t>(i) * nq + j] = mode_of[i] == mode_of[j];
    x = interact_(x, same_mode, {});

    // Offsets (rotated into the scene frame) plus last observed positions.
    const Var local = ops::scale(traj_(x), kPositionScale);
    const int T = t_future_;
    Tensor rot_c(nq, T * 2), rot_s(nq, T * 2), base(nq, T * 2);
    std::vector<int> swap_index(T * 2);
    for (int c = 0; c < T * 2; ++c) swap_index[c] = c ^ 1;
    for (int i = 0; i < nq; ++i) {
        const int a = agent_of[i];
        const double c = std::cos(agents.frame_rotation[a]), s = std::sin(agents.frame_rotation[a]);
        for (int t = 0; t < T; ++t) {
            rot_c(i, 2 * t) = c;
            rot_c(i, 2 * t + 1) = c;
            rot_s(i, 2 * t) = -s;
            rot_s(i, 2 * t + 1) = s;
            base(i, 2 * t) = agents.last_positions[a].x;
            base(i, 2 * t + 1) = agents.last_positions[a].y;
        }
    }
    // (x', y') = (c x - s y, s x + c y): cos-weighted copy plus sin-weighted swap.
    const Var swapped = ops::transpose(ops::gather_rows(ops::transpose(local), swap_index));
    Var traj = ops::add(ops::mul(local, ops::constant(rot_c)), ops::mul(swapped, ops::constant(rot_s)));
    traj = ops::add(traj, ops::constant(base));

    std::vector<Var> pooled;
    for (int m = 0; m < k; ++m) pooled.push_back(ops::mean_rows(ops::slice_rows(x, m * n, n)));
    const Var logits = ops::transpose(conf_(ops::concat_rows(pooled, width)));

    JointPredictionVars out;
    out.trajectories = traj;
    out.log_conf = ops::log_softmax_rows(logits);
    out.k = k;
    out.agents = n;
    out.steps = T;
    return out;
}

HardAssignment hard_assignment_loss(const JointPredictionVars& pred, const std::vector<FutureTrack>& futures,
                                    const HeadConfig& config) {
    const int k = pred.k, n = pred.agents, T = pred.steps;
    if (static_cast<int>(futures.size()) != n) throw std::invalid_argument("hard_assignment_loss: agent count mismatch");
    Tensor target(n, T * 2);
    std::vector<uint8_t> valid_rows_per_step;
    Tensor weights(n, T * 2);
    int valid_steps = 0;
    for (int a = 0; a < n; ++a) {
        if (static_cast<int>(futures[a].positions.size()) != T)
            throw std::invalid_argument("hard_assignment_loss: future length mismatch");
        for (int t = 0; t < T; ++t) {
            target(a, 2 * t) = futures[a].positions[t].x;
            target(a, 2 * t + 1) = futures[a].positions[t].y;
            if (futures[a].valid[t]) {
                weights(a, 2 * t) = weights(a, 2 * t + 1) = 1.0;
                ++valid_steps;
            }
        }
    }
    if (valid_steps == 0) throw DataError("hard_assignment_loss: scene has no valid future steps");
    const double norm = 1.0 / (2.0 * valid_steps);

    HardAssignment out;
    const Tensor& tv = pred.trajectories.value();
    for (int m = 0; m < k; ++m) {
        double s = 0.0;
        for (int a = 0; a < n; ++a)
            for (int c = 0; c < T * 2; ++c)
                if (weights(a, c) != 0.0) s += ops::huber(tv(m * n + a, c) - target(a, c), config.huber_delta);
        out.mode_losses.push_back(s * norm);
    }
    out.best_mode = static_cast<int>(std::min_element(out.mode_losses.begin(), out.mode_losses.end()) -
                                     out.mode_losses.begin());

    const Var best = ops::slice_rows(pred.trajectories, out.best_mode * n, n);
    // Huber over valid entries only: invalid entries get a zero residual.
    Tensor masked_target = target;
    for (int a = 0; a < n; ++a)
        for (int c = 0; c < T * 2; ++c)
            if (weights(a, c) == 0.0) masked_target(a, c) = best.value()(a, c);
    const Var residual = ops::sub(best, ops::constant(masked_target));
    const Var selected = ops::mul(residual, ops::constant(weights));
    // huber_mean averages over all entries; rescale to the valid-entry mean.
    const std::vector<uint8_t> all_rows(n, 1);
    const Var h = ops::huber_mean(selected, Tensor(n, T * 2), all_rows, config.huber_delta);
    out.regression = ops::scale(h, static_cast<double>(n) * T * 2 * norm);
    out.classification = ops::scale(ops::element(pred.log_conf, 0, out.best_mode), -1.0);
    out.loss = ops::add(out.regression, ops::scale(out.classification, config.classification_weight));
    return out;
}

JointPrediction postprocess_confidences(const JointPrediction& pred, double threshold, double penalty) {
    JointPrediction out = pred;
    const int k = pred.k, n = pred.agents, T = pred.steps;
    if (k == 0 || n == 0 || T == 0) return out;
    std::vector<int> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return pred.confidences[a] > pred.confidences[b]; });
    std::vector<double> conf = pred.confidences;
    for (int r = 1; r < k; ++r) {
        const int j = order[r];
        for (int q = 0; q < r; ++q) {
            const int i = order[q];
            double d = 0.0;
            for (int a = 0; a < n; ++a)
                d += std::hypot(pred.at(i, a, T - 1, 0) - pred.at(j, a, T - 1, 0),
                                pred.at(i, a, T - 1, 1) - pred.at(j, a, T - 1, 1));
            if (d / n < threshold) conf[j] *= penalty;
        }
    }
    const double total = std::accumulate(conf.begin(), conf.end(), 0.0);
    for (int m = 0; m < k; ++m) out.confidences[m] = total > 0.0 ? conf[m] / total : 1.0 / k;
    return out;
}

} // namespace jm
