#include "csfc/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>

namespace csfc {

template <typename T>
Adam<T>::Adam(std::vector<Tensor<T>> params, double lr, double beta1, double beta2,
              double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
        m_.emplace_back(p.size(), 0.0);
        v_.emplace_back(p.size(), 0.0);
    }
}

template <typename T>
void Adam<T>::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto data = params_[i].mutable_data();
        const auto grad = params_[i].grad();
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t k = 0; k < data.size(); ++k) {
            const double g = static_cast<double>(grad[k]);
            m[k] = beta1_ * m[k] + (1.0 - beta1_) * g;
            v[k] = beta2_ * v[k] + (1.0 - beta2_) * g * g;
            const double update = lr_ * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + eps_);
            data[k] = static_cast<T>(static_cast<double>(data[k]) - update);
        }
    }
}

template <typename T>
void Adam<T>::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

template class Adam<float>;
template class Adam<double>;

template <typename T>
double clip_gradient_norm(std::vector<Tensor<T>>& params, double max_norm) {
    double sq = 0.0;
    for (auto& p : params) {
        for (const T g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double scale = max_norm / norm;
        for (auto& p : params) {
            for (T& g : p.mutable_grad()) g = static_cast<T>(g * scale);
        }
    }
    return norm;
}

template double clip_gradient_norm<float>(std::vector<Tensor<float>>&, double);
template double clip_gradient_norm<double>(std::vector<Tensor<double>>&, double);

namespace {

/// Lowest-id argmax over one row of logits.
template <typename T>
int argmax_row(std::span<const T> row) {
    int best = 0;
    for (std::size_t k = 1; k < row.size(); ++k) {
        if (row[k] > row[best]) best = static_cast<int>(k);
    }
    return best;
}

std::string format_float(double value) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", value);
    return buf;
}

} // namespace

template <typename T>
double validation_accuracy(Model<T>& model, const std::vector<EncodedSample>& val) {
    if (val.empty()) {
        throw ConfigError("validation accuracy needs a nonempty validation set");
    }
    std::size_t correct = 0;
    std::size_t total = 0;
    for (const auto& sample : val) {
        const auto logits = forward_logits(model, sample, nullptr);
        const std::size_t vocab = logits.axes()[1].size;
        const auto data = logits.data();
        for (std::size_t k = 0; k < sample.y_out.size(); ++k) {
            if (sample.y_out[k] == pad_id) continue;
            ++total;
            const auto row = data.subspan(k * vocab, vocab);
            if (argmax_row(row) == sample.y_out[k]) ++correct;
        }
    }
    if (total == 0) {
        throw ConfigError("validation set has no non-pad summary positions");
    }
    return static_cast<double>(correct) / static_cast<double>(total);
}

template double validation_accuracy<float>(Model<float>&,
                                           const std::vector<EncodedSample>&);
template double validation_accuracy<double>(Model<double>&,
                                            const std::vector<EncodedSample>&);

std::size_t select_best(const std::vector<double>& accuracies) {
    if (accuracies.empty()) {
        throw ConfigError("cannot select the best epoch from an empty history");
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < accuracies.size(); ++i) {
        if (accuracies[i] > accuracies[best]) best = i;
    }
    return best + 1;
}

TrainState train(Model<float>& model, const std::vector<EncodedSample>& train_set,
                 const std::vector<EncodedSample>& val_set, const TrainOptions& opts) {
    if (train_set.empty()) {
        throw ConfigError("training needs a nonempty training set");
    }
    namespace fs = std::filesystem;
    if (!opts.out_dir.empty()) fs::create_directories(opts.out_dir);

    std::vector<Tensor<float>> params;
    visit_model_params(model,
                       [&](const std::string&, Tensor<float>& t) { params.push_back(t); });
    set_training_mode(model, true);
    Adam<float> adam(params, model.cfg.r);
    Rng rng(model.cfg.seed);

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    TrainState state;
    for (std::size_t epoch = 1; epoch <= opts.max_epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += model.cfg.b) {
            const std::size_t end = std::min(begin + model.cfg.b, order.size());
            std::vector<EncodedSample> batch;
            batch.reserve(end - begin);
            for (std::size_t i = begin; i < end; ++i) batch.push_back(train_set[order[i]]);

            adam.zero_grad();
            auto loss = forward_loss<float>(model, batch, &rng);
            const double value = static_cast<double>(loss.value());
            ++state.step;
            if (!std::isfinite(value)) {
                std::string ids;
                for (const auto& sample : batch) {
                    if (!ids.empty()) ids += ", ";
                    ids += sample.id;
                }
                throw NumericError("non-finite loss at step " +
                                   std::to_string(state.step) + " on batch [" + ids +
                                   "]");
            }
            backward(loss);
            clip_gradient_norm(params, opts.clip_norm);
            adam.step();

            loss_sum += value;
            ++batches;
            if (opts.log) {
                *opts.log << "epoch=" << epoch << " step=" << state.step
                          << " loss=" << format_float(value) << "\n";
            }
        }
        state.epoch = epoch;
        state.epoch_loss.push_back(loss_sum / static_cast<double>(batches));

        set_training_mode(model, false);
        const double acc = validation_accuracy(model, val_set);
        set_training_mode(model, true);
        state.val_accuracy.push_back(acc);
        if (opts.log) {
            *opts.log << "epoch=" << epoch << " step=" << state.step
                      << " loss=" << format_float(state.epoch_loss.back())
                      << " val_acc=" << format_float(acc) << "\n";
        }
        if (!opts.out_dir.empty()) {
            save_checkpoint(opts.out_dir + "/epoch" + std::to_string(epoch) + ".ckpt",
                            model);
        }
        if (acc > state.best_val_accuracy) {
            state.best_val_accuracy = acc;
            state.best_epoch = epoch;
        }
    }
    set_training_mode(model, false);

    if (!opts.out_dir.empty()) {
        const std::string best =
            opts.out_dir + "/epoch" + std::to_string(state.best_epoch) + ".ckpt";
        fs::copy_file(best, opts.out_dir + "/best.ckpt",
                      fs::copy_options::overwrite_existing);
        std::ofstream marker(opts.out_dir + "/best.txt");
        marker << "epoch=" << state.best_epoch
               << " val_acc=" << format_float(state.best_val_accuracy) << "\n";
    }
    return state;
}

} // namespace csfc
