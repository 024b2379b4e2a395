#pragma once

#include "facefit/dataset.hpp"
#include "facefit/energy.hpp"
#include "facefit/model.hpp"

#include <Eigen/Core>

#include <functional>
#include <string_view>
#include <vector>

namespace facefit {

/// Adam with decoupled weight decay.
class AdamW
{
public:
    AdamW(Eigen::Index size, double beta1, double beta2, double epsilon, double weight_decay);

    /// One update of `x` in place using gradient `g`.
    void step(Eigen::VectorXd& x, const Eigen::VectorXd& g, double learning_rate);

    long steps() const { return t_; }

private:
    double beta1_;
    double beta2_;
    double epsilon_;
    double weight_decay_;
    long t_ = 0;
    Eigen::VectorXd m_;
    Eigen::VectorXd v_;
};

/// Multiplies the learning rate by `decay` once the best value has not
/// improved (relative `threshold`) for more than `patience` observations.
class PlateauScheduler
{
public:
    PlateauScheduler(double learning_rate, double decay, int patience, double threshold);

    /// Returns true when this observation triggered a reduction.
    bool observe(double value);
    double learning_rate() const { return lr_; }
    double best() const { return best_; }

private:
    double lr_;
    double decay_;
    int patience_;
    double threshold_;
    double best_;
    int bad_steps_ = 0;
};

enum class StopReason { lr_floor, max_iters };

std::string_view stop_reason_name(StopReason r);

struct TracePoint
{
    int iteration = 0;
    double learning_rate = 0.0;
    EnergyBreakdown energy;
};

struct FitReport
{
    /// Lowest-energy parameters seen during the run.
    TrackingParams params;
    std::vector<TracePoint> trace;
    int iterations = 0;
    double final_learning_rate = 0.0;
    StopReason reason = StopReason::max_iters;
    EnergyBreakdown initial;
    EnergyBreakdown final;
};

using FitCallback = std::function<void(const TracePoint&)>;

/**
 * Heuristic starting point: zero shape, expression and deformation; per frame
 * a head pose from a weak-perspective fit of the template to the observations
 * of the best-covered camera. Frames without enough observations fall back to
 * an identity rotation one meter in front of camera 0. Free focal lengths
 * start at the image width.
 */
TrackingParams initialize_params(const BlendshapeModel& model, const SequenceDataset& dataset,
                                 const EnergyConfig& config);

/**
 * Minimizes the total energy from `init` with AdamW and a reduce-on-plateau
 * schedule. Stops once the learning rate falls below lr_floor or after
 * max_iters evaluations. The neutral template comes from the config or,
 * failing that, from the dataset (when use_mica_template is set).
 *
 * Throws NumericError naming the term when any energy term becomes non-finite.
 */
FitReport fit(const BlendshapeModel& model, const SequenceDataset& dataset, const EnergyConfig& config,
              const TrackingParams& init, const FitCallback& callback = {});

/// Config with the neutral template resolved against the dataset.
EnergyConfig resolve_config(const EnergyConfig& config, const SequenceDataset& dataset);

} // namespace facefit
