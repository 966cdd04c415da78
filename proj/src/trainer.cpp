#include "csc/trainer.hpp"

#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace csc::train {

void TrainConfig::validate() const {
    if (strategy != 1 && strategy != 2) throw ConfigError("train: strategy must be 1 or 2");
    if (lr_max < 0 || lr_min < 0) throw ConfigError("train: learning rates must be >= 0");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) {
        throw ConfigError("train: adam betas must lie in [0,1)");
    }
    if (adam_eps <= 0) throw ConfigError("train: adam_eps must be positive");
    if (batch_size < 2) throw ConfigError("train: batch_size must be >= 2");
    if (steps < 0) throw ConfigError("train: steps must be >= 0");
    if (lipschitz_refresh < 1) throw ConfigError("train: lipschitz_refresh must be >= 1");
    rate.validate();
}

Tensor adam_update(const Tensor& param, const Tensor& grad, AdamState& state, real_t lr,
                   real_t beta1, real_t beta2, real_t eps) {
    if (!param.same_shape(grad)) throw DimensionError("adam_update: shape mismatch");
    if (state.m.empty()) {
        state.m = Tensor::zeros(param.shape());
        state.v = Tensor::zeros(param.shape());
    }
    state.t += 1;
    const real_t bc1 = 1 - std::pow(beta1, static_cast<real_t>(state.t));
    const real_t bc2 = 1 - std::pow(beta2, static_cast<real_t>(state.t));
    Tensor out(param.shape());
    for (std::int64_t i = 0; i < param.size(); ++i) {
        state.m[i] = beta1 * state.m[i] + (1 - beta1) * grad[i];
        state.v[i] = beta2 * state.v[i] + (1 - beta2) * grad[i] * grad[i];
        const real_t mhat = state.m[i] / bc1;
        const real_t vhat = state.v[i] / bc2;
        out[i] = param[i] - lr * mhat / (std::sqrt(vhat) + eps);
    }
    return out;
}

Trainer::Trainer(std::shared_ptr<net::Autoencoder> model, TrainConfig cfg)
    : model_(std::move(model)), cfg_(cfg), rng_(Rng::substream(cfg.seed, 0x7e41)) {
    cfg_.validate();
}

std::unique_ptr<Trainer::LoopBuild> Trainer::build_ascent(const Tensor& batch) {
    auto lb = std::make_unique<LoopBuild>();
    autodiff::Graph& g = lb->graph;
    autodiff::NodeId x = g.constant(batch);
    net::ForwardOptions fwd;
    fwd.train = true;
    // Stop-gradient at the reconstruction: the ascent direction uses only
    // encoder applications, never paths through the decoder.
    lb->nodes = model_->loop(g, x, fwd, fwd, fwd, /*stop_gradient_at_reconstruction=*/true);
    autodiff::NodeId zT = g.transpose2d(lb->nodes.features);
    autodiff::NodeId zh = cfg_.ascent_first_pass_only ? g.stop_gradient(lb->nodes.refeatures)
                                                      : lb->nodes.refeatures;
    autodiff::NodeId zhT = g.transpose2d(zh);
    lb->objective = rate::rate_reduction_node(g, zT, zhT, cfg_.rate);
    return lb;
}

std::unique_ptr<Trainer::LoopBuild> Trainer::build_descent(const Tensor& batch, int strategy,
                                                           bool detach_decoder_params_only) {
    auto lb = std::make_unique<LoopBuild>();
    autodiff::Graph& g = lb->graph;
    autodiff::NodeId x = g.constant(batch);
    net::ForwardOptions fwd;
    fwd.train = true;

    if (detach_decoder_params_only) {
        // Probe mode: strategy 2 minus the decoder-parameter paths. Chains
        // through the decoder stay intact.
        net::ForwardOptions dec = fwd;
        dec.detach_params = true;
        lb->nodes = model_->loop(g, x, fwd, dec, fwd, false);
        lb->objective = rate::rate_reduction_node(g, g.transpose2d(lb->nodes.features),
                                                  g.transpose2d(lb->nodes.refeatures), cfg_.rate);
        return lb;
    }
    if (strategy == 2) {
        lb->nodes = model_->loop(g, x, fwd, fwd, fwd, false);
        lb->objective = rate::rate_reduction_node(g, g.transpose2d(lb->nodes.features),
                                                  g.transpose2d(lb->nodes.refeatures), cfg_.rate);
        return lb;
    }

    // Strategy 1: only decoder-parameter paths carry gradient. Both encoder
    // passes run with detached parameters, and the first-pass features are
    // cut so nothing reaches the encoder role.
    net::ForwardOptions enc = fwd;
    enc.detach_params = true;
    enc.codes_out = &lb->nodes.codes;
    lb->nodes.features = model_->encode(g, x, enc);
    autodiff::NodeId zs = g.stop_gradient(lb->nodes.features);
    lb->nodes.reconstruction = model_->decode(g, zs, fwd);
    net::ForwardOptions reenc = fwd;
    reenc.detach_params = true;
    lb->nodes.refeatures = model_->encode(g, lb->nodes.reconstruction, reenc);
    lb->objective = rate::rate_reduction_node(g, g.transpose2d(zs),
                                              g.transpose2d(lb->nodes.refeatures), cfg_.rate);
    return lb;
}

void Trainer::apply_adam(const std::vector<autodiff::ParamPtr>& params,
                         std::map<std::string, AdamState>& moments, real_t lr, real_t sign) {
    for (const auto& p : params) {
        AdamState& st = moments[p->name];
        Tensor grad = sign < 0 ? scale(p->grad, -1) : p->grad;
        p->value = adam_update(p->value, grad, st, lr, cfg_.beta1, cfg_.beta2, cfg_.adam_eps);
    }
}

void Trainer::check_finite(real_t value, const char* stage, const Tensor&) const {
    if (std::isfinite(value)) return;
    std::ostringstream os;
    os << stage << ": non-finite objective at step " << step_ + 1 << "; dictionary norms:";
    for (std::size_t i = 0; i < model_->dictionaries().size(); ++i) {
        os << " dict" << i + 1 << "="
           << std::sqrt(squared_norm(model_->dictionaries()[i]->kernel()->value));
    }
    throw NumericError(os.str());
}

real_t Trainer::max_step(const Tensor& batch) {
    auto lb = build_ascent(batch);
    const real_t dr = lb->graph.value(lb->objective)[0];
    check_finite(dr, "max_step", batch);
    lb->graph.backward(lb->objective);
    apply_adam(model_->encoder_parameters(), ascent_moments_, cfg_.lr_max, /*sign=*/-1);
    return dr;
}

real_t Trainer::min_step(const Tensor& batch, StepMetrics* metrics) {
    auto lb = build_descent(batch, cfg_.strategy);
    const real_t dr = lb->graph.value(lb->objective)[0];
    check_finite(dr, "min_step", batch);
    if (metrics) {
        metrics->delta_r = dr;
        const Tensor& xhat = lb->graph.value(lb->nodes.reconstruction);
        metrics->recon_mse =
            squared_norm(sub(xhat, batch)) / static_cast<real_t>(batch.size());
        real_t sparsity = 0;
        for (autodiff::NodeId code : lb->nodes.codes) {
            const Tensor& z = lb->graph.value(code);
            sparsity += static_cast<real_t>(count_nonzero(z)) / static_cast<real_t>(z.size());
        }
        metrics->sparsity =
            lb->nodes.codes.empty() ? 0 : sparsity / static_cast<real_t>(lb->nodes.codes.size());
    }
    lb->graph.backward(lb->objective);
    apply_adam(model_->decoder_parameters(), descent_moments_, cfg_.lr_min, /*sign=*/+1);
    return dr;
}

StepMetrics Trainer::step(const Tensor& batch) {
    const auto t0 = std::chrono::steady_clock::now();
    maybe_refresh_lipschitz();
    max_step(batch);
    StepMetrics m;
    min_step(batch, &m);
    step_ += 1;
    m.step = step_;
    if (cfg_.timing) {
        m.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
    }
    return m;
}

void Trainer::maybe_refresh_lipschitz() {
    if (step_ % cfg_.lipschitz_refresh == 0) {
        model_->invalidate_lipschitz();
    }
}

void Trainer::train(const data::Dataset& dataset,
                    const std::function<void(const StepMetrics&)>& sink,
                    const std::string& checkpoint_dir) {
    if (dataset.count() < cfg_.batch_size) {
        throw ConfigError("train: dataset smaller than one batch");
    }
    while (step_ < cfg_.steps) {
        auto perm = rng_.permutation(dataset.count());
        perm.resize(static_cast<std::size_t>(cfg_.batch_size));
        Tensor batch = dataset.gather(perm);
        StepMetrics m = step(batch);
        sink(m);
        if (!checkpoint_dir.empty() && cfg_.checkpoint_every > 0 &&
            step_ % cfg_.checkpoint_every == 0) {
            save_checkpoint(checkpoint_dir + "/ckpt_step" + std::to_string(step_) + ".cscckpt");
        }
    }
    if (!checkpoint_dir.empty()) {
        save_checkpoint(checkpoint_dir + "/checkpoint.cscckpt");
    }
}

namespace {

GradMap collect_grads(const std::vector<autodiff::ParamPtr>& params) {
    GradMap out;
    for (const auto& p : params) out[p->name] = p->grad;
    return out;
}

struct BnSnapshot {
    std::vector<Tensor> tensors;
};

BnSnapshot snapshot_bn(net::Autoencoder& model) {
    BnSnapshot s;
    for (auto* side : {&model.encoder_bn(), &model.decoder_bn()}) {
        for (auto& bn : *side) {
            if (bn) {
                s.tensors.push_back(bn->stats.mean);
                s.tensors.push_back(bn->stats.var);
            }
        }
    }
    return s;
}

void restore_bn(net::Autoencoder& model, const BnSnapshot& s) {
    std::size_t i = 0;
    for (auto* side : {&model.encoder_bn(), &model.decoder_bn()}) {
        for (auto& bn : *side) {
            if (bn) {
                bn->stats.mean = s.tensors[i++];
                bn->stats.var = s.tensors[i++];
            }
        }
    }
}

} // namespace

GradMap Trainer::ascent_gradient(const Tensor& batch) {
    auto snap = snapshot_bn(*model_);
    auto lb = build_ascent(batch);
    lb->graph.backward(lb->objective);
    restore_bn(*model_, snap);
    return collect_grads(model_->parameters());
}

GradMap Trainer::descent_gradient(const Tensor& batch, int strategy) {
    auto snap = snapshot_bn(*model_);
    auto lb = build_descent(batch, strategy);
    lb->graph.backward(lb->objective);
    restore_bn(*model_, snap);
    return collect_grads(model_->parameters());
}

GradMap Trainer::encoder_path_gradient(const Tensor& batch) {
    auto snap = snapshot_bn(*model_);
    auto lb = build_descent(batch, cfg_.strategy, /*detach_decoder_params_only=*/true);
    lb->graph.backward(lb->objective);
    restore_bn(*model_, snap);
    return collect_grads(model_->parameters());
}

std::string format_metrics_row(const StepMetrics& m) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%" PRId64 ",%.12g,%.12g,%.12g,%" PRId64, m.step,
                  static_cast<double>(m.delta_r), static_cast<double>(m.recon_mse),
                  static_cast<double>(m.sparsity), m.wall_ms);
    return buf;
}

} // namespace csc::train
