#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "csc/data_io.hpp"
#include "csc/networks.hpp"
#include "csc/rate.hpp"
#include "csc/rng.hpp"

namespace csc::train {

struct TrainConfig {
    int strategy = 2;            ///< 1: descent through the decoder path only; 2: total derivative
    real_t lr_max = 2e-4;        ///< ascent step learning rate
    real_t lr_min = 2e-4;        ///< descent step learning rate
    real_t beta1 = 0.0;
    real_t beta2 = 0.9;
    real_t adam_eps = 1e-8;
    std::int64_t batch_size = 64;
    std::int64_t steps = 500;
    std::uint64_t seed = 0;
    rate::RateConfig rate;
    int lipschitz_refresh = 100;  ///< power-iteration refresh period, steps
    /// Restrict the ascent gradient to the first encoder pass.
    bool ascent_first_pass_only = false;
    std::int64_t checkpoint_every = 0;  ///< 0: only on demand
    bool timing = false;  ///< real wall_ms in the log (breaks byte-level determinism)

    void validate() const;
};

struct AdamState {
    Tensor m;
    Tensor v;
    std::int64_t t = 0;
};

/// Standard bias-corrected Adam; returns the updated parameter value and
/// advances the moment estimates in place.
Tensor adam_update(const Tensor& param, const Tensor& grad, AdamState& state, real_t lr,
                   real_t beta1, real_t beta2, real_t eps);

struct StepMetrics {
    std::int64_t step = 0;
    real_t delta_r = 0;     ///< descent-pass objective before the update
    real_t recon_mse = 0;   ///< mean squared reconstruction error of the batch
    real_t sparsity = 0;    ///< mean fraction of nonzero code entries across layers
    std::int64_t wall_ms = 0;
};

/// Gradient snapshot keyed by parameter name (testing/introspection).
using GradMap = std::map<std::string, Tensor>;

/// Alternating maximin training: per batch one ascent step on the encoder
/// role and one descent step on the dictionaries (plus decoder norms),
/// following the selected strategy.
class Trainer {
public:
    Trainer(std::shared_ptr<net::Autoencoder> model, TrainConfig cfg);

    /// Ascent pass: gradients flow through both encoder applications but are
    /// stopped at the reconstruction, so no decoder path contributes.
    /// Returns the pre-update objective.
    real_t max_step(const Tensor& batch);
    /// Descent pass per the configured strategy. Returns the pre-update
    /// objective and fills `metrics` when given.
    real_t min_step(const Tensor& batch, StepMetrics* metrics = nullptr);

    /// One ascent+descent round on the same batch.
    StepMetrics step(const Tensor& batch);

    /// Full run over a dataset; appends one CSV row per step through `sink`.
    /// Resumes from the current step counter.
    void train(const data::Dataset& dataset, const std::function<void(const StepMetrics&)>& sink,
               const std::string& checkpoint_dir = "");

    // ---- gradient introspection (no update applied) ----
    GradMap ascent_gradient(const Tensor& batch);
    GradMap descent_gradient(const Tensor& batch, int strategy);
    /// Descent gradient with decoder parameter uses detached but every chain
    /// intact: the encoder-path complement of strategy 1 inside strategy 2.
    GradMap encoder_path_gradient(const Tensor& batch);

    net::Autoencoder& model() { return *model_; }
    const TrainConfig& config() const { return cfg_; }
    std::int64_t current_step() const { return step_; }
    Rng& rng() { return rng_; }

    void save_checkpoint(const std::string& path) const;
    /// Rebuilds the model and trainer exactly as saved.
    static Trainer load_checkpoint(const std::string& path);

private:
    struct LoopBuild {
        autodiff::Graph graph;
        net::LoopNodes nodes;
        autodiff::NodeId objective;
    };
    std::unique_ptr<LoopBuild> build_ascent(const Tensor& batch);
    std::unique_ptr<LoopBuild> build_descent(const Tensor& batch, int strategy,
                                             bool detach_decoder_params_only = false);
    void apply_adam(const std::vector<autodiff::ParamPtr>& params,
                    std::map<std::string, AdamState>& moments, real_t lr, real_t sign);
    void maybe_refresh_lipschitz();
    void check_finite(real_t value, const char* stage, const Tensor& batch) const;

    std::shared_ptr<net::Autoencoder> model_;
    TrainConfig cfg_;
    std::map<std::string, AdamState> ascent_moments_;
    std::map<std::string, AdamState> descent_moments_;
    std::int64_t step_ = 0;
    Rng rng_;

    friend struct CheckpointCodec;
};

/// CSV header used by the metrics log.
inline constexpr const char* kMetricsHeader = "step,delta_r,recon_mse,sparsity,wall_ms";

std::string format_metrics_row(const StepMetrics& m);

} // namespace csc::train
