#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "csfc/train.hpp"
#include "synthetic.hpp"

using namespace csfc;

namespace {

ModelConfig micro_config(Variant variant = Variant::fc) {
    ModelConfig cfg;
    cfg.n = 2;
    cfg.m = 3;
    cfg.t = 4;
    cfg.w = 3;
    cfg.v = 20;
    cfg.z = 20;
    cfg.e = 8;
    cfg.L = 1;
    cfg.h = 2;
    cfg.b = 8;
    cfg.r = 3e-4;
    cfg.variant = variant;
    cfg.seed = 11;
    cfg.dropout = 0.0;
    return cfg;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream body;
    body << in.rdbuf();
    return body.str();
}

std::vector<float> snapshot(Model<float>& model) {
    std::vector<float> values;
    visit_model_params(model, [&](const std::string&, Tensor<float>& t) {
        values.insert(values.end(), t.data().begin(), t.data().end());
    });
    return values;
}

std::vector<double> losses_from_log(const std::string& text) {
    std::vector<double> losses;
    std::istringstream lines(text);
    std::string line;
    while (std::getline(lines, line)) {
        if (line.find("val_acc=") != std::string::npos) continue; // epoch summary
        const auto pos = line.find("loss=");
        REQUIRE(pos != std::string::npos);
        losses.push_back(std::stod(line.substr(pos + 5)));
    }
    return losses;
}

struct TempDir {
    std::filesystem::path root;
    explicit TempDir(const std::string& name) : root(name) {
        std::filesystem::remove_all(root);
    }
    ~TempDir() { std::filesystem::remove_all(root); }
};

} // namespace

TEST_CASE("adam follows the hand-computed update on a scalar") {
    auto p = Tensor<double>::from_data({{"x", 1}}, {2.0});
    p.set_requires_grad(true);
    Adam<double> adam({p}, 0.1);

    // two steps with a constant gradient of 0.5, worked by hand:
    // m_t and v_t bias-correct exactly to 0.5 and 0.25 when g is constant,
    // so each step moves by lr * 0.5 / (0.5 + eps) = lr to first order
    p.mutable_grad()[0] = 0.5;
    adam.step();
    const double m1 = 0.1 * 0.5, v1 = 0.001 * 0.25;
    const double mhat1 = m1 / 0.1, vhat1 = v1 / 0.001;
    const double expect1 = 2.0 - 0.1 * mhat1 / (std::sqrt(vhat1) + 1e-8);
    CHECK(p.value() == doctest::Approx(expect1).epsilon(1e-12));

    p.mutable_grad()[0] = 0.5;
    adam.step();
    const double m2 = 0.9 * m1 + 0.1 * 0.5;
    const double v2 = 0.999 * v1 + 0.001 * 0.25;
    const double mhat2 = m2 / (1.0 - 0.9 * 0.9);
    const double vhat2 = v2 / (1.0 - 0.999 * 0.999);
    const double expect2 = expect1 - 0.1 * mhat2 / (std::sqrt(vhat2) + 1e-8);
    CHECK(p.value() == doctest::Approx(expect2).epsilon(1e-12));
}

TEST_CASE("adam accumulates moments per parameter element") {
    auto p = Tensor<double>::from_data({{"x", 3}}, {0.0, 0.0, 0.0});
    p.set_requires_grad(true);
    Adam<double> adam({p}, 0.01);
    auto grad = p.mutable_grad();
    grad[0] = 1.0;
    grad[1] = -1.0;
    grad[2] = 0.0;
    adam.step();
    // first step moves each coordinate by roughly -lr * sign(g)
    CHECK(p.data()[0] == doctest::Approx(-0.01).epsilon(1e-6));
    CHECK(p.data()[1] == doctest::Approx(0.01).epsilon(1e-6));
    CHECK(p.data()[2] == 0.0);
}

TEST_CASE("gradient clipping rescales only oversized gradients") {
    auto a = Tensor<double>::from_data({{"x", 2}}, {0.0, 0.0});
    auto b = Tensor<double>::from_data({{"y", 1}}, {0.0});
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    std::vector<Tensor<double>> params{a, b};

    a.mutable_grad()[0] = 3.0;
    a.mutable_grad()[1] = 0.0;
    b.mutable_grad()[0] = 4.0;
    const double norm = clip_gradient_norm(params, 5.0);
    CHECK(norm == doctest::Approx(5.0));
    CHECK(a.grad()[0] == 3.0); // at the limit: untouched
    CHECK(b.grad()[0] == 4.0);

    a.mutable_grad()[0] = 6.0;
    b.mutable_grad()[0] = 8.0;
    const double big = clip_gradient_norm(params, 5.0);
    CHECK(big == doctest::Approx(10.0));
    CHECK(a.grad()[0] == doctest::Approx(3.0));
    CHECK(b.grad()[0] == doctest::Approx(4.0));
    const double after = clip_gradient_norm(params, 5.0);
    CHECK(after == doctest::Approx(5.0));
}

TEST_CASE("zero learning rate leaves parameters bitwise unchanged") {
    auto cfg = micro_config();
    cfg.r = 0.0;
    Rng init(cfg.seed);
    auto model = make_model<float>(cfg, init);
    Rng data_rng(3);
    const auto data = synth::memorization_set(cfg, 12, data_rng);

    const auto before = snapshot(model);
    TrainOptions opts;
    opts.max_epochs = 1;
    train(model, data, data, opts);
    const auto after = snapshot(model);
    REQUIRE(before.size() == after.size());
    for (std::size_t i = 0; i < before.size(); ++i) {
        CHECK(before[i] == after[i]);
    }
}

TEST_CASE("an epoch keeps the trailing partial batch") {
    auto cfg = micro_config();
    cfg.b = 8;
    Rng init(cfg.seed);
    auto model = make_model<float>(cfg, init);
    Rng data_rng(4);
    const auto data = synth::memorization_set(cfg, 20, data_rng);

    std::ostringstream log;
    TrainOptions opts;
    opts.max_epochs = 2;
    opts.log = &log;
    const auto state = train(model, data, data, opts);
    CHECK(state.step == 6); // ceil(20 / 8) = 3 batches per epoch
    CHECK(losses_from_log(log.str()).size() == 6);
}

TEST_CASE("training loss decreases over the first ten steps of a seeded run") {
    auto cfg = micro_config();
    cfg.b = 32; // full-batch: every step lowers the same objective
    cfg.r = 3e-3;
    Rng init(cfg.seed);
    auto model = make_model<float>(cfg, init);
    Rng data_rng(5);
    const auto data = synth::memorization_set(cfg, 32, data_rng);

    std::ostringstream log;
    TrainOptions opts;
    opts.max_epochs = 10; // one step per epoch
    opts.log = &log;
    train(model, data, data, opts);

    const auto losses = losses_from_log(log.str());
    REQUIRE(losses.size() == 10);
    for (std::size_t i = 1; i < 10; ++i) {
        INFO("step ", i + 1, ": ", losses[i], " vs ", losses[i - 1]);
        CHECK(losses[i] < losses[i - 1]);
    }
    // recorded trace endpoints of this seeded run
    CHECK(losses.front() == doctest::Approx(3.461290).epsilon(1e-4));
    CHECK(losses.back() == doctest::Approx(2.534160).epsilon(1e-4));
}

TEST_CASE("validation accuracy scores non-pad positions under teacher forcing") {
    auto cfg = micro_config();
    Rng init(cfg.seed);
    auto model = make_model<float>(cfg, init);
    Rng data_rng(6);
    auto data = synth::memorization_set(cfg, 4, data_rng);

    // an all-zero model emits identical logits everywhere, so the argmax is
    // id 0 (pad), which can never match a non-pad reference
    visit_model_params(model, [](const std::string&, Tensor<float>& t) {
        for (auto& x : t.mutable_data()) x = 0.0f;
    });
    CHECK(validation_accuracy(model, data) == 0.0);

    CHECK_THROWS_AS(validation_accuracy(model, {}), ConfigError);
}

TEST_CASE("a random model scores near chance on random references") {
    auto cfg = micro_config();
    cfg.z = 30;
    cfg.w = 6;
    Rng data_rng(8);
    const auto data = synth::memorization_set(cfg, 80, data_rng);

    // pool three seeds; prediction/reference independence puts expected
    // accuracy at 1/z with binomial spread, inflated for within-model
    // correlation by counting samples rather than positions
    double total = 0.0;
    for (std::uint64_t seed : {21u, 22u, 23u}) {
        auto probe_cfg = cfg;
        probe_cfg.seed = seed;
        Rng init(seed);
        auto model = make_model<float>(probe_cfg, init);
        total += validation_accuracy(model, data);
    }
    const double acc = total / 3.0;
    const double p = 1.0 / 30.0;
    const double sigma = std::sqrt(p * (1.0 - p) / (3.0 * 80.0));
    INFO("accuracy ", acc, " expected ", p, " band ", 3.0 * sigma);
    CHECK(std::abs(acc - p) <= 3.0 * sigma);
}

TEST_CASE("select_best prefers the highest then earliest epoch") {
    CHECK(select_best({0.1, 0.3, 0.2}) == 2);
    CHECK(select_best({0.3, 0.3}) == 1);
    CHECK(select_best({0.5}) == 1);
    CHECK_THROWS_AS(select_best({}), ConfigError);
}

TEST_CASE("training is bitwise reproducible given a seed") {
    auto cfg = micro_config();
    Rng data_rng(9);
    const auto data = synth::memorization_set(cfg, 16, data_rng);

    TempDir run_a("train_run_a"), run_b("train_run_b");
    std::ostringstream log_a, log_b;

    for (auto* pair : {&run_a, &run_b}) {
        Rng init(cfg.seed);
        auto model = make_model<float>(cfg, init);
        TrainOptions opts;
        opts.max_epochs = 2;
        opts.out_dir = pair->root.string();
        opts.log = (pair == &run_a) ? &log_a : &log_b;
        train(model, data, data, opts);
    }
    CHECK(log_a.str() == log_b.str());
    CHECK(!log_a.str().empty());
    CHECK(slurp((run_a.root / "epoch2.ckpt").string()) ==
          slurp((run_b.root / "epoch2.ckpt").string()));
}

TEST_CASE("a non-finite loss aborts with the step and batch ids") {
    auto cfg = micro_config();
    Rng init(cfg.seed);
    auto model = make_model<float>(cfg, init);
    Rng data_rng(10);
    auto data = synth::memorization_set(cfg, 2, data_rng);

    // crush the bias at one reference id so its probability underflows to
    // zero and the cross entropy overflows to +inf
    const int victim = data[0].y_out[0];
    model.out_b.mutable_data()[static_cast<std::size_t>(victim)] = -3.0e38f;

    TrainOptions opts;
    opts.max_epochs = 1;
    try {
        train(model, data, data, opts);
        FAIL("expected a NumericError");
    } catch (const NumericError& e) {
        const std::string what = e.what();
        CHECK(what.find("step 1") != std::string::npos);
        CHECK(what.find("synth#") != std::string::npos);
    }
}

TEST_CASE("checkpoints land per epoch with a best-epoch marker") {
    auto cfg = micro_config();
    cfg.r = 3e-3;
    Rng init(cfg.seed);
    auto model = make_model<float>(cfg, init);
    Rng data_rng(12);
    const auto data = synth::memorization_set(cfg, 8, data_rng);

    TempDir run("train_run_ckpts");
    TrainOptions opts;
    opts.max_epochs = 3;
    opts.out_dir = run.root.string();
    const auto state = train(model, data, data, opts);

    for (int e = 1; e <= 3; ++e) {
        CHECK(std::filesystem::exists(run.root / ("epoch" + std::to_string(e) +
                                                  ".ckpt")));
    }
    REQUIRE(state.best_epoch >= 1);
    CHECK(state.best_epoch <= state.epoch);
    CHECK(state.best_epoch == select_best(state.val_accuracy));
    CHECK(slurp((run.root / "best.ckpt").string()) ==
          slurp((run.root /
                 ("epoch" + std::to_string(state.best_epoch) + ".ckpt"))
                    .string()));
    const auto marker = slurp((run.root / "best.txt").string());
    CHECK(marker.find("epoch=" + std::to_string(state.best_epoch)) !=
          std::string::npos);
}

TEST_CASE("batch loss equals the mean of example losses") {
    auto cfg = micro_config();
    Rng init(cfg.seed);
    auto model = make_model<float>(cfg, init);
    Rng data_rng(13);
    const auto data = synth::memorization_set(cfg, 5, data_rng);

    double mean = 0.0;
    for (const auto& sample : data) {
        mean += static_cast<double>(example_loss(model, sample, nullptr).value());
    }
    mean /= static_cast<double>(data.size());
    const auto batched =
        static_cast<double>(forward_loss<float>(model, data, nullptr).value());
    CHECK(batched == doctest::Approx(mean).epsilon(1e-6));
}
