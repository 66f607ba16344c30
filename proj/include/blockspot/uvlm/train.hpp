#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "blockspot/parallel.hpp"
#include "blockspot/rng.hpp"
#include "blockspot/uvlm/model.hpp"

namespace blockspot::uvlm {

struct TrainConfig {
    int steps = 1000;
    int batch_size = 8;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double adam_eps = 1e-8;
    double weight_decay = 0.01;
    double grad_clip = 1.0;  // global norm; 0 disables
    std::uint64_t seed = 0;
    MaskKind mask = MaskKind::Unified;
    int eval_every = 0;             // 0 = never run the full-set evaluation
    double stop_at_accuracy = 0.0;  // early stop once a full-set eval reaches this
};

struct CurvePoint {
    int step = 0;       // 1-based
    double loss = 0.0;  // batch pooled mean NLL
    double accuracy = 0.0;  // batch exact-sequence accuracy (teacher-forced)
};

struct EvalPoint {
    int step = 0;
    double accuracy = 0.0;  // full-dataset exact-sequence accuracy
};

template <typename T>
struct TrainResult {
    ModelParams<T> params;
    std::vector<CurvePoint> curve;
    std::vector<EvalPoint> evals;
    int stopped_at = 0;  // step of early stop, 0 if the run completed
};

namespace detail {

template <typename T>
std::vector<Mat<T>*> tensor_list(ModelParams<T>& p) {
    std::vector<Mat<T>*> out;
    for_each_tensor(p, [&out](const std::string&, Mat<T>& m) { out.push_back(&m); });
    return out;
}

}  // namespace detail

// Adam with decoupled weight decay; all state in-repo.
template <typename T>
class AdamW {
  public:
    AdamW(const Hyper& hyper, double lr, double beta1, double beta2, double eps,
          double weight_decay)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay),
          m_(make_params<T>(hyper)), v_(make_params<T>(hyper)) {}

    void step(ModelParams<T>& params, ModelParams<T>& grads) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        auto ps = detail::tensor_list(params);
        auto gs = detail::tensor_list(grads);
        auto ms = detail::tensor_list(m_);
        auto vs = detail::tensor_list(v_);
        for (std::size_t k = 0; k < ps.size(); ++k) {
            Mat<T>& p = *ps[k];
            const Mat<T>& g = *gs[k];
            Mat<T>& m = *ms[k];
            Mat<T>& v = *vs[k];
            for (std::size_t i = 0; i < p.a.size(); ++i) {
                double gi = static_cast<double>(g.a[i]);
                double mi = beta1_ * static_cast<double>(m.a[i]) + (1.0 - beta1_) * gi;
                double vi = beta2_ * static_cast<double>(v.a[i]) + (1.0 - beta2_) * gi * gi;
                m.a[i] = static_cast<T>(mi);
                v.a[i] = static_cast<T>(vi);
                double update = (mi / bc1) / (std::sqrt(vi / bc2) + eps_) +
                                weight_decay_ * static_cast<double>(p.a[i]);
                p.a[i] = static_cast<T>(static_cast<double>(p.a[i]) - lr_ * update);
            }
        }
    }

  private:
    double lr_, beta1_, beta2_, eps_, weight_decay_;
    ModelParams<T> m_, v_;
    long t_ = 0;
};

// Teacher-forced exact-sequence accuracy over a dataset.
template <typename T>
double exact_sequence_accuracy(const ModelParams<T>& params,
                               const std::vector<SampleTokens>& dataset, MaskKind kind,
                               int sep_id, int eos_id) {
    if (dataset.empty()) return 0.0;
    std::vector<int> correct(dataset.size(), 0);
    parallel_for(static_cast<int>(dataset.size()), [&](int i) {
        const SampleTokens& sample = dataset[static_cast<std::size_t>(i)];
        AttentionMask mask = build_mask(kind, sample.prefix_len(), sample.total_len());
        Mat<T> logits = forward(params, sample, mask, sep_id);
        std::vector<int> targets = next_token_targets(sample, eos_id);
        bool ok = true;
        for (int q = sample.prefix_len() - 1; q < logits.rows && ok; ++q) {
            int target = targets[static_cast<std::size_t>(q)];
            if (target < 0) continue;
            const T* row = logits.row(q);
            int argmax = 0;
            for (int j = 1; j < logits.cols; ++j) {
                if (row[j] > row[argmax]) argmax = j;
            }
            ok = argmax == target;
        }
        correct[static_cast<std::size_t>(i)] = ok ? 1 : 0;
    });
    int total = 0;
    for (int c : correct) total += c;
    return static_cast<double>(total) / static_cast<double>(dataset.size());
}

// Mini-batch training. Per-sample gradients are computed in parallel and
// reduced in sample order, so curves are bit-identical for a given seed
// regardless of thread count.
template <typename T>
TrainResult<T> train(ModelParams<T> params, const std::vector<SampleTokens>& dataset,
                     const TrainConfig& cfg, int sep_id, int eos_id) {
    TrainResult<T> result;
    if (dataset.empty()) {
        result.params = std::move(params);
        return result;
    }
    Rng rng(cfg.seed ^ 0xA0761D6478BD642Full);
    AdamW<T> opt(params.hyper, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay);

    const int batch = std::min<int>(cfg.batch_size, static_cast<int>(dataset.size()));
    std::vector<ModelParams<T>> grad_pool;
    for (int i = 0; i < batch; ++i) grad_pool.push_back(make_params<T>(params.hyper));
    ModelParams<T> grads = make_params<T>(params.hyper);

    const bool full_batch = batch >= static_cast<int>(dataset.size());
    for (int step = 1; step <= cfg.steps; ++step) {
        // Full-dataset batches are fixed and in order; smaller batches are
        // drawn uniformly from the seeded stream.
        std::vector<int> indices(static_cast<std::size_t>(batch));
        if (full_batch) {
            std::iota(indices.begin(), indices.end(), 0);
        } else {
            for (int& idx : indices) {
                idx = rng.uniform_int(0, static_cast<int>(dataset.size()) - 1);
            }
        }
        int total_slots = 0;
        for (int idx : indices) {
            total_slots +=
                static_cast<int>(dataset[static_cast<std::size_t>(idx)].lang.size()) + 1;
        }
        const double slot_weight = 1.0 / total_slots;

        std::vector<double> nll(static_cast<std::size_t>(batch), 0.0);
        std::vector<int> seq_correct(static_cast<std::size_t>(batch), 0);
        parallel_for(batch, [&](int b) {
            const SampleTokens& sample = dataset[static_cast<std::size_t>(indices[static_cast<std::size_t>(b)])];
            AttentionMask mask = build_mask(cfg.mask, sample.prefix_len(), sample.total_len());
            std::vector<int> targets = next_token_targets(sample, eos_id);
            ModelParams<T>& g = grad_pool[static_cast<std::size_t>(b)];
            auto zero = detail::tensor_list(g);
            for (Mat<T>* m : zero) m->zero();
            bool correct = false;
            auto [sum, slots] = detail::backward_sample(params, sample, mask, targets, sep_id,
                                                        slot_weight, g, &correct);
            (void)slots;
            nll[static_cast<std::size_t>(b)] = sum;
            seq_correct[static_cast<std::size_t>(b)] = correct ? 1 : 0;
        });

        // Fixed-order reduction.
        auto gsum = detail::tensor_list(grads);
        for (Mat<T>* m : gsum) m->zero();
        for (int b = 0; b < batch; ++b) {
            auto gb = detail::tensor_list(grad_pool[static_cast<std::size_t>(b)]);
            for (std::size_t k = 0; k < gsum.size(); ++k) {
                for (std::size_t i = 0; i < gsum[k]->a.size(); ++i) {
                    gsum[k]->a[i] += gb[k]->a[i];
                }
            }
        }

        if (cfg.grad_clip > 0.0) {
            double norm2 = 0.0;
            for (Mat<T>* m : gsum) {
                for (T v : m->a) norm2 += static_cast<double>(v) * static_cast<double>(v);
            }
            double norm = std::sqrt(norm2);
            if (norm > cfg.grad_clip) {
                T scale = static_cast<T>(cfg.grad_clip / norm);
                for (Mat<T>* m : gsum) {
                    for (T& v : m->a) v *= scale;
                }
            }
        }

        opt.step(params, grads);

        double loss = 0.0;
        for (double v : nll) loss += v;
        loss /= total_slots;
        if (!std::isfinite(loss)) throw NonFiniteLoss("training loss diverged");
        int correct_count = 0;
        for (int c : seq_correct) correct_count += c;
        result.curve.push_back(
            CurvePoint{step, loss, static_cast<double>(correct_count) / batch});

        if (cfg.eval_every > 0 && step % cfg.eval_every == 0) {
            double acc = exact_sequence_accuracy(params, dataset, cfg.mask, sep_id, eos_id);
            result.evals.push_back(EvalPoint{step, acc});
            if (cfg.stop_at_accuracy > 0.0 && acc >= cfg.stop_at_accuracy) {
                result.stopped_at = step;
                break;
            }
        }
    }
    result.params = std::move(params);
    return result;
}

}  // namespace blockspot::uvlm
