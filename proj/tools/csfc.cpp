#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "csfc/corpus.hpp"
#include "csfc/errors.hpp"
#include "csfc/eval.hpp"
#include "csfc/infer.hpp"
#include "csfc/model.hpp"
#include "csfc/train.hpp"

namespace fs = std::filesystem;
using namespace csfc;

namespace {

// Duplicates stream output onto a second sink, so training logs reach both
// the terminal and the run directory.
class TeeBuf : public std::streambuf {
public:
    TeeBuf(std::streambuf* a, std::streambuf* b) : a_(a), b_(b) {}

protected:
    int overflow(int c) override {
        if (c == traits_type::eof()) return c;
        const int ra = a_->sputc(static_cast<char>(c));
        const int rb = b_->sputc(static_cast<char>(c));
        return ra == traits_type::eof() || rb == traits_type::eof()
                   ? traits_type::eof()
                   : c;
    }
    int sync() override {
        const int ra = a_->pubsync();
        const int rb = b_->pubsync();
        return ra == 0 && rb == 0 ? 0 : -1;
    }

private:
    std::streambuf* a_;
    std::streambuf* b_;
};

std::array<double, 3> parse_ratios(const std::string& text) {
    std::array<double, 3> out{};
    std::stringstream ss(text);
    std::string cell;
    std::size_t i = 0;
    while (std::getline(ss, cell, ',')) {
        if (i >= 3) throw ConfigError("expected three ratios, got '" + text + "'");
        std::size_t used = 0;
        try {
            out[i] = std::stod(cell, &used);
        } catch (const std::exception&) {
            throw ConfigError("bad ratio '" + cell + "'");
        }
        if (used != cell.size()) throw ConfigError("bad ratio '" + cell + "'");
        ++i;
    }
    if (i != 3) throw ConfigError("expected three ratios, got '" + text + "'");
    return out;
}

nlohmann::json config_json(const ModelConfig& cfg) {
    nlohmann::json j;
    j["n"] = cfg.n;
    j["m"] = cfg.m;
    j["t"] = cfg.t;
    j["w"] = cfg.w;
    j["v"] = cfg.v;
    j["z"] = cfg.z;
    j["e"] = cfg.e;
    j["L"] = cfg.L;
    j["h"] = cfg.h;
    j["b"] = cfg.b;
    j["r"] = cfg.r;
    j["variant"] = variant_name(cfg.variant);
    j["seed"] = cfg.seed;
    j["dropout"] = cfg.dropout;
    j["swap_cross"] = cfg.swap_cross;
    return j;
}

std::string format4(double value) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", value);
    return buf;
}

struct BuildCorpusArgs {
    std::string src, lang, out, config;
    std::uint64_t seed = 1;
    std::string ratios = "0.8,0.1,0.1";
};

int cmd_build_corpus(const BuildCorpusArgs& args) {
    if (!fs::is_directory(args.src)) {
        throw DataError("source directory not readable: " + args.src);
    }
    const Lang lang = parse_lang(args.lang);
    const ModelConfig cfg = load_model_config(args.config);
    const auto ratios = parse_ratios(args.ratios);

    const auto records = load_corpus_dir(args.src, lang);
    const auto samples = build_samples(records, cfg);
    if (samples.empty()) {
        throw DataError("no usable samples under " + args.src +
                        " (functions need a doc summary of at least two words)");
    }
    const auto split = split_by_project(samples, ratios, args.seed);

    fs::create_directories(args.out);
    const fs::path out(args.out);
    save_samples_jsonl(split.train, (out / "train.jsonl").string());
    save_samples_jsonl(split.val, (out / "val.jsonl").string());
    save_samples_jsonl(split.test, (out / "test.jsonl").string());

    const auto src_vocab = build_source_vocab(split.train, cfg.v);
    const auto sum_vocab = build_summary_vocab(split.train, cfg.z);
    src_vocab.save((out / "source_vocab.txt").string());
    sum_vocab.save((out / "summary_vocab.txt").string());

    nlohmann::json manifest;
    manifest["lang"] = lang_name(lang);
    manifest["seed"] = args.seed;
    manifest["ratios"] = {ratios[0], ratios[1], ratios[2]};
    manifest["counts"]["records"] = records.size();
    manifest["counts"]["samples"] = samples.size();
    manifest["counts"]["train"] = split.train.size();
    manifest["counts"]["val"] = split.val.size();
    manifest["counts"]["test"] = split.test.size();
    manifest["vocab"]["source"] = src_vocab.size();
    manifest["vocab"]["summary"] = sum_vocab.size();
    manifest["config"] = config_json(cfg);
    std::ofstream mf(out / "manifest.json", std::ios::binary);
    mf << manifest.dump(2) << "\n";

    std::cout << "extracted " << records.size() << " functions, kept "
              << samples.size() << " samples\n";
    std::cout << "split train=" << split.train.size() << " val=" << split.val.size()
              << " test=" << split.test.size() << "\n";
    std::cout << "vocab source=" << src_vocab.size()
              << " summary=" << sum_vocab.size() << "\n";
    std::cout << "wrote corpus to " << args.out << "\n";
    return 0;
}

struct TrainArgs {
    std::string data, config, variant, out;
    std::size_t epochs = 10;
};

int cmd_train(const TrainArgs& args) {
    ModelConfig cfg = load_model_config(args.config);
    if (!args.variant.empty()) cfg.variant = parse_variant(args.variant);
    cfg.validate();

    const fs::path data(args.data);
    const auto train_samples = load_samples_jsonl((data / "train.jsonl").string());
    const auto val_samples = load_samples_jsonl((data / "val.jsonl").string());
    const auto src_vocab = Vocabulary::load((data / "source_vocab.txt").string());
    const auto sum_vocab = Vocabulary::load((data / "summary_vocab.txt").string());
    if (src_vocab.size() > cfg.v || sum_vocab.size() > cfg.z) {
        throw ConfigError("vocabulary larger than the configured v/z caps: " +
                          std::to_string(src_vocab.size()) + "/" +
                          std::to_string(sum_vocab.size()) + " vs " +
                          std::to_string(cfg.v) + "/" + std::to_string(cfg.z));
    }
    const auto train_set = encode_samples(train_samples, src_vocab, sum_vocab, cfg);
    const auto val_set = encode_samples(val_samples, src_vocab, sum_vocab, cfg);

    fs::create_directories(args.out);
    Rng rng(cfg.seed);
    auto model = make_model<float>(cfg, rng);

    std::ofstream log_file(fs::path(args.out) / "train.log", std::ios::binary);
    TeeBuf tee(std::cout.rdbuf(), log_file.rdbuf());
    std::ostream log(&tee);
    TrainOptions opts;
    opts.max_epochs = args.epochs;
    opts.out_dir = args.out;
    opts.log = &log;
    const TrainState state = train(model, train_set, val_set, opts);

    std::cout << "finished " << state.epoch << " epochs, best epoch "
              << state.best_epoch << " with val_acc "
              << format4(state.best_val_accuracy) << "\n";
    return 0;
}

struct PredictArgs {
    std::string ckpt, in, out, src_vocab, sum_vocab;
    std::size_t max_len = 0;
};

int cmd_predict(const PredictArgs& args) {
    auto model = load_checkpoint(args.ckpt);
    set_training_mode(model, false);
    const auto samples = load_samples_jsonl(args.in);

    const fs::path beside = fs::path(args.in).parent_path();
    const auto src_path = args.src_vocab.empty()
                              ? (beside / "source_vocab.txt").string()
                              : args.src_vocab;
    const auto sum_path = args.sum_vocab.empty()
                              ? (beside / "summary_vocab.txt").string()
                              : args.sum_vocab;
    const auto src_vocab = Vocabulary::load(src_path);
    const auto sum_vocab = Vocabulary::load(sum_path);

    const std::size_t cap = args.max_len == 0 ? model.cfg.w : args.max_len;
    std::vector<std::pair<std::string, std::string>> preds;
    preds.reserve(samples.size());
    for (const auto& sample : samples) {
        const auto enc = encode_sample(sample, src_vocab, sum_vocab, model.cfg);
        const auto ids = greedy_decode(model, enc, cap, sum_vocab.size());
        preds.emplace_back(sample.id, detokenize(ids, sum_vocab));
    }
    write_predictions(args.out, preds);
    std::cout << "wrote " << preds.size() << " predictions to " << args.out << "\n";
    return 0;
}

struct EvalArgs {
    std::string preds, data, emb_pred, emb_ref;
    bool stratify_buckets = false;
    bool json = false;
    std::size_t min_count = 60;
};

int cmd_eval(const EvalArgs& args) {
    const auto preds = load_predictions(args.preds);
    const auto samples = load_samples_jsonl(args.data);

    std::map<std::string, const Sample*> by_id;
    for (const auto& sample : samples) {
        if (!by_id.emplace(sample.id, &sample).second) {
            throw DataError("duplicate sample id '" + sample.id + "'");
        }
    }
    if (preds.size() != samples.size()) {
        throw MismatchError("got " + std::to_string(preds.size()) +
                            " predictions for " + std::to_string(samples.size()) +
                            " samples");
    }
    std::vector<std::vector<std::string>> pred_words;
    std::vector<std::vector<std::string>> refs;
    std::set<std::string> seen;
    for (const auto& [id, text] : preds) {
        const auto it = by_id.find(id);
        if (it == by_id.end()) {
            throw MismatchError("prediction id '" + id + "' has no sample");
        }
        if (!seen.insert(id).second) {
            throw DataError("duplicate prediction id '" + id + "'");
        }
        std::vector<std::string> ws;
        std::istringstream stream(text);
        std::string word;
        while (stream >> word) ws.push_back(word);
        pred_words.push_back(std::move(ws));
        refs.push_back(it->second->summary);
    }

    const double b = corpus_bleu(pred_words, refs);
    const double m = corpus_meteor(pred_words, refs);

    std::map<std::string, double> embed_scaled;
    bool have_embed = false;
    if (!args.emb_pred.empty() || !args.emb_ref.empty()) {
        if (args.emb_pred.empty() || args.emb_ref.empty()) {
            throw ConfigError("--emb-pred and --emb-ref must be given together");
        }
        const auto ep = load_embeddings(args.emb_pred);
        const auto er = load_embeddings(args.emb_ref);
        const auto cosines = embedding_similarity_by_id(ep, er);
        for (const auto& [id, text] : preds) {
            const auto it = cosines.find(id);
            if (it == cosines.end()) {
                throw MismatchError("no embedding for prediction id '" + id + "'");
            }
            embed_scaled[id] = 100.0 * it->second;
        }
        have_embed = true;
    }

    const bool json_only = args.stratify_buckets && args.json;
    if (!json_only) {
        std::cout << "samples=" << preds.size() << " bleu=" << format4(b)
                  << " meteor=" << format4(m);
        if (have_embed) {
            double sum = 0.0;
            for (const auto& [id, value] : embed_scaled) sum += value;
            std::cout << " embed="
                      << format4(sum / static_cast<double>(preds.size()));
        }
        std::cout << "\n";
    }

    if (args.stratify_buckets) {
        const auto report = stratify(preds, samples,
                                     have_embed ? &embed_scaled : nullptr,
                                     args.min_count);
        std::cout << (args.json ? report.to_json() + "\n" : report.to_text());
    }
    return 0;
}

struct GradcheckArgs {
    std::string config;
    double eps = 1e-5;
    double tol = 1e-4;
    bool corrupt = false;
};

int cmd_gradcheck(const GradcheckArgs& args) {
    const ModelConfig cfg = load_model_config(args.config);
    Rng init(cfg.seed);
    auto model = make_model<double>(cfg, init);
    set_training_mode(model, true);

    // deterministic probe example with one pad in each field
    Rng draws(cfg.seed + 1);
    const auto draw = [&](std::size_t vocab) {
        return static_cast<int>(4 + draws.below(vocab - 4));
    };
    std::vector<int> target;
    for (std::size_t i = 0; i + 1 < cfg.t; ++i) target.push_back(draw(cfg.v));
    std::vector<std::vector<int>> fc_rows(cfg.n);
    for (auto& row : fc_rows) {
        for (std::size_t j = 0; j < cfg.m; ++j) row.push_back(draw(cfg.v));
    }
    if (!fc_rows.empty()) fc_rows.back().pop_back();
    std::vector<int> summary;
    for (std::size_t i = 0; i + 2 < cfg.w; ++i) summary.push_back(draw(cfg.z));
    if (summary.empty()) summary.push_back(draw(cfg.z));
    const auto sample = variant_input(target, fc_rows, summary, cfg);

    std::vector<std::pair<std::string, Tensor<double>>> params;
    visit_model_params(model, [&](const std::string& name, Tensor<double>& t) {
        params.emplace_back(name, t);
    });

    const auto objective = [&]() {
        auto loss = example_loss(model, sample, nullptr);
        if (args.corrupt) {
            // value drifts with the first parameter behind autodiff's back,
            // so a working checker must flag it
            loss.mutable_data()[0] += 0.01 * params.front().second.data()[0];
        }
        return loss;
    };
    const GradReport report = grad_check(objective, params, args.eps);
    std::cout << report.to_string() << "\n";
    const bool ok = report.passed(args.tol);
    std::cout << (ok ? "gradcheck passed" : "gradcheck FAILED") << ": max rel err "
              << report.max_rel_err << " vs tolerance " << args.tol << "\n";
    return ok ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"dual-encoder source code summarizer"};
    app.require_subcommand(1);

    BuildCorpusArgs bc;
    auto* bc_cmd = app.add_subcommand(
        "build-corpus", "extract functions and write dataset splits");
    bc_cmd->add_option("--src", bc.src, "source tree to scan")->required();
    bc_cmd->add_option("--lang", bc.lang, "java or python")->required();
    bc_cmd->add_option("--out", bc.out, "output directory")->required();
    bc_cmd->add_option("--config", bc.config, "model config file")->required();
    bc_cmd->add_option("--seed", bc.seed, "split shuffle seed");
    bc_cmd->add_option("--ratios", bc.ratios, "train,val,test sample ratios");

    TrainArgs tr;
    auto* tr_cmd = app.add_subcommand("train", "fit a model on a built corpus");
    tr_cmd->add_option("--data", tr.data, "corpus directory from build-corpus")
        ->required();
    tr_cmd->add_option("--config", tr.config, "model config file")->required();
    tr_cmd->add_option("--variant", tr.variant,
                       "fc, vanilla, alt, or comb (overrides the config)");
    tr_cmd->add_option("--out", tr.out, "run directory for checkpoints and log")
        ->required();
    tr_cmd->add_option("--epochs", tr.epochs, "training epochs");

    PredictArgs pr;
    auto* pr_cmd = app.add_subcommand("predict", "greedy-decode summaries");
    pr_cmd->add_option("--ckpt", pr.ckpt, "checkpoint file")->required();
    pr_cmd->add_option("--in", pr.in, "dataset jsonl to summarize")->required();
    pr_cmd->add_option("--out", pr.out, "predictions tsv")->required();
    pr_cmd->add_option("--src-vocab", pr.src_vocab,
                       "source vocabulary (default: next to --in)");
    pr_cmd->add_option("--sum-vocab", pr.sum_vocab,
                       "summary vocabulary (default: next to --in)");
    pr_cmd->add_option("--max-len", pr.max_len,
                       "decode length cap (default: model summary width)");

    EvalArgs ev;
    auto* ev_cmd = app.add_subcommand("eval", "score predictions");
    ev_cmd->add_option("--preds", ev.preds, "predictions tsv")->required();
    ev_cmd->add_option("--data", ev.data, "reference dataset jsonl")->required();
    ev_cmd->add_option("--emb-pred", ev.emb_pred, "prediction embeddings tsv");
    ev_cmd->add_option("--emb-ref", ev.emb_ref, "reference embeddings tsv");
    ev_cmd->add_flag("--stratify", ev.stratify_buckets,
                     "report buckets by word overlap");
    ev_cmd->add_flag("--json", ev.json,
                     "emit only the stratified report, as JSON");
    ev_cmd->add_option("--min-count", ev.min_count,
                       "suppress buckets smaller than this");

    GradcheckArgs gc;
    auto* gc_cmd = app.add_subcommand(
        "gradcheck", "finite-difference audit of every parameter gradient");
    gc_cmd->add_option("--config", gc.config, "model config file")->required();
    gc_cmd->add_option("--eps", gc.eps, "central difference step");
    gc_cmd->add_option("--tol", gc.tol, "max relative error to accept");
    gc_cmd->add_flag("--corrupt", gc.corrupt,
                     "sabotage one gradient on purpose; the check must fail");

    int code = 0;
    bc_cmd->callback([&] { code = cmd_build_corpus(bc); });
    tr_cmd->callback([&] { code = cmd_train(tr); });
    pr_cmd->callback([&] { code = cmd_predict(pr); });
    ev_cmd->callback([&] { code = cmd_eval(ev); });
    gc_cmd->callback([&] { code = cmd_gradcheck(gc); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const MismatchError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return code;
}
