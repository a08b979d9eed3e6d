#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "csfc/model.hpp"
#include "csfc/rng.hpp"

namespace csfc {

/// Adam with bias correction over a fixed parameter list. Moments are kept
/// in double regardless of the parameter precision.
template <typename T>
class Adam {
public:
    Adam(std::vector<Tensor<T>> params, double lr, double beta1 = 0.9,
         double beta2 = 0.999, double eps = 1e-8);

    void step();      // folds the accumulated gradients into the parameters
    void zero_grad();

private:
    std::vector<Tensor<T>> params_;
    std::vector<std::vector<double>> m_, v_;
    double lr_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;
};

/// Scales every gradient so the global L2 norm is at most max_norm.
/// Returns the norm before clipping.
template <typename T>
double clip_gradient_norm(std::vector<Tensor<T>>& params, double max_norm);

struct TrainOptions {
    std::size_t max_epochs = 10;
    double clip_norm = 5.0;
    std::string out_dir;          // when nonempty: epoch<i>.ckpt, best.ckpt, best.txt
    std::ostream* log = nullptr;  // per-step and per-epoch lines; nullptr silences
};

/// What train() hands back: where the loop stopped, the per-epoch traces,
/// and which epoch won on validation accuracy.
struct TrainState {
    std::size_t epoch = 0;  // last completed epoch, 1-based
    std::size_t step = 0;   // total optimizer steps taken
    double best_val_accuracy = -1.0;
    std::size_t best_epoch = 0;  // never exceeds epoch
    std::vector<double> epoch_loss;
    std::vector<double> val_accuracy;
};

/// Teacher-forced next-token accuracy: the fraction of non-pad summary
/// positions whose logits argmax equals the reference id. Dropout is off.
template <typename T>
double validation_accuracy(Model<T>& model, const std::vector<EncodedSample>& val);

/// 1-based epoch with the highest accuracy; ties go to the earliest epoch.
std::size_t select_best(const std::vector<double>& accuracies);

/// Teacher-forced Adam loop: per epoch, shuffle with the model seed, sweep
/// batches of size cfg.b (last partial batch kept), clip, step, then score
/// the validation set and write epoch<i>.ckpt. A non-finite loss aborts
/// with the offending step and batch ids.
TrainState train(Model<float>& model, const std::vector<EncodedSample>& train_set,
                 const std::vector<EncodedSample>& val_set, const TrainOptions& opts);

} // namespace csfc
