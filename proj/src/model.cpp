#include "csfc/model.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace csfc {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace {

std::vector<int> fit(const std::vector<int>& ids, std::size_t len) {
    std::vector<int> out(ids.begin(),
                         ids.size() > len ? ids.begin() + static_cast<long>(len) : ids.end());
    out.resize(len, pad_id);
    return out;
}

} // namespace

EncodedSample variant_input(const std::vector<int>& target_ids,
                            const std::vector<std::vector<int>>& fc_rows,
                            const std::vector<int>& summary_ids, const ModelConfig& cfg) {
    EncodedSample s;

    if (cfg.variant == Variant::comb) {
        std::vector<int> window = fit(target_ids, cfg.t);
        for (std::size_t i = 0; i < cfg.n; ++i) {
            const std::vector<int> row =
                i < fc_rows.size() ? fit(fc_rows[i], cfg.m) : std::vector<int>(cfg.m, pad_id);
            window.insert(window.end(), row.begin(), row.end());
        }
        s.x_s = std::move(window);
    } else {
        s.x_s = fit(target_ids, cfg.t);
    }

    if (cfg.variant == Variant::fc) {
        s.x_fc.reserve(cfg.n * cfg.m);
        for (std::size_t i = 0; i < cfg.n; ++i) {
            const std::vector<int> row =
                i < fc_rows.size() ? fit(fc_rows[i], cfg.m) : std::vector<int>(cfg.m, pad_id);
            s.x_fc.insert(s.x_fc.end(), row.begin(), row.end());
        }
    } else if (cfg.variant == Variant::alt) {
        const std::vector<int> row = fit(target_ids, cfg.m);
        s.x_fc.reserve(cfg.n * cfg.m);
        for (std::size_t i = 0; i < cfg.n; ++i) {
            s.x_fc.insert(s.x_fc.end(), row.begin(), row.end());
        }
    }

    std::vector<int> words(summary_ids.begin(),
                           summary_ids.size() > cfg.w - 1
                               ? summary_ids.begin() + static_cast<long>(cfg.w - 1)
                               : summary_ids.end());
    s.y_in.reserve(cfg.w);
    s.y_in.push_back(sos_id);
    s.y_in.insert(s.y_in.end(), words.begin(), words.end());
    s.y_in.resize(cfg.w, pad_id);
    s.y_out = words;
    s.y_out.push_back(eos_id);
    s.y_out.resize(cfg.w, pad_id);
    return s;
}

template <typename T>
Model<T> make_model(const ModelConfig& cfg, Rng& rng) {
    Model<T> model;
    model.cfg = cfg;
    if (cfg.has_file_context_encoder()) {
        model.fc_tok = make_embedding<T>(cfg.v, cfg.e, rng);
        model.fc_pos = make_embedding<T>(cfg.m, cfg.e, rng);
        for (std::size_t i = 0; i < cfg.L; ++i) {
            model.fc_blocks.push_back(make_xform_params<T>(cfg.e, cfg.h, rng));
        }
    }
    model.s_tok = make_embedding<T>(cfg.v, cfg.e, rng);
    model.s_pos = make_embedding<T>(cfg.target_len(), cfg.e, rng);
    for (std::size_t i = 0; i < cfg.L; ++i) {
        model.s_blocks.push_back(make_xform_params<T>(cfg.e, cfg.h, rng));
    }
    model.d_tok = make_embedding<T>(cfg.z, cfg.e, rng);
    model.d_pos = make_embedding<T>(cfg.w, cfg.e, rng);
    for (std::size_t i = 0; i < cfg.L; ++i) {
        model.dec_self.push_back(make_xform_params<T>(cfg.e, cfg.h, rng));
        if (cfg.has_file_context_encoder()) {
            model.dec_cross_a.push_back(make_xform_params<T>(cfg.e, cfg.h, rng));
        }
        model.dec_cross_b.push_back(make_xform_params<T>(cfg.e, cfg.h, rng));
    }
    model.out_w = Tensor<T>::uniform(
        {{"dim", cfg.e}, {"vocab", cfg.z}},
        static_cast<T>(-std::sqrt(6.0 / static_cast<double>(cfg.e + cfg.z))),
        static_cast<T>(std::sqrt(6.0 / static_cast<double>(cfg.e + cfg.z))), rng);
    model.out_b = Tensor<T>::zeros({{"vocab", cfg.z}});
    return model;
}

template <typename T>
Tensor<T> encode_file_context(Model<T>& model, const std::vector<int>& x_fc, Rng* rng) {
    const ModelConfig& cfg = model.cfg;
    if (!cfg.has_file_context_encoder()) {
        throw ConfigError("variant '" + std::string(variant_name(cfg.variant)) +
                          "' has no file-context encoder");
    }
    if (x_fc.size() != cfg.n * cfg.m) {
        throw ShapeError("file context has " + std::to_string(x_fc.size()) +
                         " ids, expected n*m = " + std::to_string(cfg.n * cfg.m));
    }
    auto tokens = embed(model.fc_tok, x_fc, {{"fcn", cfg.n}, {"token", cfg.m}});
    auto positions = positional_embed_per_subroutine(model.fc_pos, "fcn", cfg.n, "token",
                                                     cfg.m);
    auto x = merge_axes(add(tokens, positions), "fcn", "token", "fcntoken");
    const auto mask = key_padding_mask(cfg.n * cfg.m, x_fc);
    for (auto& block : model.fc_blocks) {
        x = xform_block(x, x, x, block, &mask, static_cast<T>(cfg.dropout), rng);
    }
    return x;
}

template <typename T>
Tensor<T> encode_target(Model<T>& model, const std::vector<int>& x_s, Rng* rng) {
    const ModelConfig& cfg = model.cfg;
    if (x_s.size() != cfg.target_len()) {
        throw ShapeError("encoder input has " + std::to_string(x_s.size()) +
                         " ids, expected " + std::to_string(cfg.target_len()));
    }
    auto tokens = embed(model.s_tok, x_s, {{"token", x_s.size()}});
    auto positions = positional_embed_flat(model.s_pos, "token", x_s.size());
    auto x = add(tokens, positions);
    const auto mask = key_padding_mask(x_s.size(), x_s);
    for (auto& block : model.s_blocks) {
        x = xform_block(x, x, x, block, &mask, static_cast<T>(cfg.dropout), rng);
    }
    return x;
}

template <typename T>
Tensor<T> decode(Model<T>& model, const std::vector<int>& y_in, const Tensor<T>* a,
                 const std::vector<int>& x_fc_ids, const Tensor<T>& b,
                 const std::vector<int>& x_s_ids, Rng* rng) {
    const ModelConfig& cfg = model.cfg;
    if (y_in.size() != cfg.w) {
        throw ShapeError("decoder input has " + std::to_string(y_in.size()) +
                         " ids, expected w = " + std::to_string(cfg.w));
    }
    if (cfg.has_file_context_encoder() != (a != nullptr)) {
        throw ConfigError(std::string("variant '") + variant_name(cfg.variant) +
                          (a != nullptr ? "' takes no file-context encoding"
                                        : "' requires a file-context encoding"));
    }
    const T rate = static_cast<T>(cfg.dropout);
    auto x = add(embed(model.d_tok, y_in, {{"word", cfg.w}}),
                 positional_embed_flat(model.d_pos, "word", cfg.w));
    const auto self_mask = combine(causal_mask(cfg.w), key_padding_mask(cfg.w, y_in));
    const auto a_mask =
        a != nullptr ? key_padding_mask(cfg.w, x_fc_ids) : AttnMask{};
    const auto b_mask = key_padding_mask(cfg.w, x_s_ids);

    for (std::size_t i = 0; i < cfg.L; ++i) {
        x = xform_block(x, x, x, model.dec_self[i], &self_mask, rate, rng);
        const bool a_first = !cfg.swap_cross;
        if (a != nullptr && a_first) {
            x = xform_block(x, *a, *a, model.dec_cross_a[i], &a_mask, rate, rng);
        }
        x = xform_block(x, b, b, model.dec_cross_b[i], &b_mask, rate, rng);
        if (a != nullptr && !a_first) {
            x = xform_block(x, *a, *a, model.dec_cross_a[i], &a_mask, rate, rng);
        }
    }
    return add(contract(x, model.out_w, "dim"),
               expand_front(model.out_b, {"word", cfg.w}));
}

template <typename T>
Tensor<T> forward_logits(Model<T>& model, const EncodedSample& sample, Rng* rng) {
    auto b = encode_target(model, sample.x_s, rng);
    if (model.cfg.has_file_context_encoder()) {
        auto a = encode_file_context(model, sample.x_fc, rng);
        return decode(model, sample.y_in, &a, sample.x_fc, b, sample.x_s, rng);
    }
    return decode<T>(model, sample.y_in, nullptr, std::vector<int>{}, b, sample.x_s, rng);
}

template <typename T>
Tensor<T> example_loss(Model<T>& model, const EncodedSample& sample, Rng* rng) {
    return cross_entropy(forward_logits(model, sample, rng), sample.y_out, "vocab",
                         pad_id);
}

template <typename T>
Tensor<T> forward_loss(Model<T>& model, std::span<const EncodedSample> batch, Rng* rng) {
    if (batch.empty()) {
        throw ConfigError("forward_loss: empty batch");
    }
    Tensor<T> total;
    for (const auto& sample : batch) {
        auto loss = example_loss(model, sample, rng);
        total = total.valid() ? add(total, loss) : loss;
    }
    return scale(total, static_cast<T>(1.0 / static_cast<double>(batch.size())));
}

// ---- checkpoint io ----

namespace {

constexpr char checkpoint_magic[4] = {'C', 'S', 'F', 'C'};
constexpr std::uint32_t checkpoint_version = 1;

void write_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t read_u32(std::istream& in, const char* what) {
    std::uint32_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
        throw DataError(std::string("checkpoint truncated while reading ") + what);
    }
    return v;
}

} // namespace

void save_checkpoint(const std::string& path, Model<float>& model) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot write checkpoint '" + path + "'");
    }
    std::uint32_t count = 0;
    visit_model_params(model, [&](const std::string&, Tensor<float>&) { ++count; });

    out.write(checkpoint_magic, sizeof checkpoint_magic);
    write_u32(out, checkpoint_version);
    write_u32(out, count);
    visit_model_params(model, [&](const std::string& name, Tensor<float>& t) {
        write_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(out, static_cast<std::uint32_t>(t.rank()));
        for (const auto& axis : t.axes()) {
            write_u32(out, static_cast<std::uint32_t>(axis.size));
        }
        out.write(reinterpret_cast<const char*>(t.data().data()),
                  static_cast<std::streamsize>(t.size() * sizeof(float)));
    });
    const std::string echo = serialize_model_config(model.cfg);
    out.write(echo.data(), static_cast<std::streamsize>(echo.size()));
    if (!out) {
        throw DataError("failed writing checkpoint '" + path + "'");
    }
}

Model<float> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot read checkpoint '" + path + "'");
    }
    char magic[4] = {};
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, checkpoint_magic, 4) != 0) {
        throw DataError("'" + path + "' is not a checkpoint (bad magic)");
    }
    if (const auto version = read_u32(in, "version"); version != checkpoint_version) {
        throw DataError("unsupported checkpoint version " + std::to_string(version));
    }
    const std::uint32_t count = read_u32(in, "tensor count");

    struct Stored {
        std::string name;
        std::vector<std::uint32_t> sizes;
        std::vector<float> data;
    };
    std::vector<Stored> stored(count);
    for (auto& entry : stored) {
        const std::uint32_t name_len = read_u32(in, "tensor name length");
        entry.name.resize(name_len);
        if (!in.read(entry.name.data(), name_len)) {
            throw DataError("checkpoint truncated while reading a tensor name");
        }
        const std::uint32_t rank = read_u32(in, "tensor rank");
        std::size_t total = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            entry.sizes.push_back(read_u32(in, "axis size"));
            total *= entry.sizes.back();
        }
        entry.data.resize(total);
        if (!in.read(reinterpret_cast<char*>(entry.data.data()),
                     static_cast<std::streamsize>(total * sizeof(float)))) {
            throw DataError("checkpoint truncated while reading tensor '" + entry.name +
                            "'");
        }
    }
    std::ostringstream echo;
    echo << in.rdbuf();
    const ModelConfig cfg = parse_model_config(echo.str());

    Rng rng(cfg.seed);
    Model<float> model = make_model<float>(cfg, rng);
    std::size_t next = 0;
    visit_model_params(model, [&](const std::string& name, Tensor<float>& t) {
        if (next >= stored.size()) {
            throw DataError("checkpoint is missing tensor '" + name + "'");
        }
        const Stored& entry = stored[next++];
        if (entry.name != name) {
            throw DataError("checkpoint tensor '" + entry.name + "' where '" + name +
                            "' was expected");
        }
        if (entry.data.size() != t.size()) {
            throw DataError("checkpoint tensor '" + name + "' holds " +
                            std::to_string(entry.data.size()) + " values, expected " +
                            std::to_string(t.size()));
        }
        std::copy(entry.data.begin(), entry.data.end(), t.mutable_data().begin());
    });
    if (next != stored.size()) {
        throw DataError("checkpoint holds " + std::to_string(stored.size()) +
                        " tensors, expected " + std::to_string(next));
    }
    return model;
}

#define CSFC_INSTANTIATE_MODEL(T)                                                         \
    template struct Model<T>;                                                             \
    template Model<T> make_model<T>(const ModelConfig&, Rng&);                            \
    template Tensor<T> encode_file_context<T>(Model<T>&, const std::vector<int>&, Rng*); \
    template Tensor<T> encode_target<T>(Model<T>&, const std::vector<int>&, Rng*);        \
    template Tensor<T> decode<T>(Model<T>&, const std::vector<int>&, const Tensor<T>*,    \
                                 const std::vector<int>&, const Tensor<T>&,              \
                                 const std::vector<int>&, Rng*);                          \
    template Tensor<T> forward_logits<T>(Model<T>&, const EncodedSample&, Rng*);          \
    template Tensor<T> example_loss<T>(Model<T>&, const EncodedSample&, Rng*);            \
    template Tensor<T> forward_loss<T>(Model<T>&, std::span<const EncodedSample>, Rng*);

CSFC_INSTANTIATE_MODEL(float)
CSFC_INSTANTIATE_MODEL(double)

#undef CSFC_INSTANTIATE_MODEL

} // namespace csfc
