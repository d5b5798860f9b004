#include "modfuser/model.hpp"

#include <cmath>
#include <fstream>
#include <map>

#include "modfuser/binio.hpp"

namespace modfuser {

const char* me_mode_name(MEMode mode) {
    switch (mode) {
        case MEMode::single: return "single";
        case MEMode::consecutive: return "consecutive";
        case MEMode::learnable: return "learnable";
        case MEMode::learnable_high_rec: return "learnable-high-rec";
    }
    return "?";
}

std::optional<MEMode> parse_me_mode(const std::string& name) {
    if (name == "single") return MEMode::single;
    if (name == "consecutive") return MEMode::consecutive;
    if (name == "learnable") return MEMode::learnable;
    if (name == "learnable-high-rec") return MEMode::learnable_high_rec;
    return std::nullopt;
}

bool me_is_learnable(MEMode mode) {
    return mode == MEMode::learnable || mode == MEMode::learnable_high_rec;
}

void validate(const ModelConfig& cfg) {
    if (cfg.channels < 8 || cfg.channels % 8 != 0)
        throw TensorError("model config: channels must be a positive multiple of 8, got " +
                          std::to_string(cfg.channels));
    if (cfg.channels % 2 != 0)
        throw TensorError("model config: channels must be even");
    if (cfg.heads < 1 || cfg.channels % cfg.heads != 0)
        throw TensorError("model config: channels " + std::to_string(cfg.channels) +
                          " not divisible by heads " + std::to_string(cfg.heads));
    if (cfg.depth < 1) throw TensorError("model config: depth must be >= 1");
    if (cfg.modalities < 2)
        throw TensorError("model config: need at least 2 modalities, got " +
                          std::to_string(cfg.modalities));
}

Tensor modality_encoding(int m, int c, bool classic) {
    if (c < 2 || c % 2 != 0)
        throw TensorError("modality_encoding: width must be even, got " + std::to_string(c));
    if (m < 0) throw TensorError("modality_encoding: negative modality index");
    std::vector<double> v(static_cast<std::size_t>(c));
    for (int i = 0; i < c / 2; ++i) {
        const double sin_denom = std::pow(10000.0, (2.0 * i) / c);
        const double cos_denom =
            classic ? sin_denom : std::pow(10000.0, (2.0 * i + 1.0) / c);
        v[static_cast<std::size_t>(2 * i)] = std::sin(m / sin_denom);
        v[static_cast<std::size_t>(2 * i + 1)] = std::cos(m / cos_denom);
    }
    return Tensor::from_data({1, c}, std::move(v));
}

Tensor modality_encoding_table(int m_count, int c, bool classic) {
    if (m_count < 1) throw TensorError("modality_encoding_table: need at least one modality");
    std::vector<double> v;
    v.reserve(static_cast<std::size_t>(m_count) * c);
    for (int m = 0; m < m_count; ++m) {
        Tensor row = modality_encoding(m, c, classic);
        v.insert(v.end(), row.data().begin(), row.data().end());
    }
    return Tensor::from_data({m_count, c}, std::move(v));
}

Translator init_translator(const ModelConfig& cfg, std::uint64_t seed) {
    validate(cfg);
    Rng rng(mix_seed(seed, 0x67656e));  // generator stream
    Translator t;
    t.cfg = cfg;
    const int c = cfg.channels;
    const int c8 = c / 8, c4 = c / 4, c2 = c / 2;
    auto block = [&](int cin, int cout, int k, int stride, int pad, bool transposed,
                     bool with_norm, Activation act) {
        return make_conv_block(cin, cout, k, stride, pad, transposed, with_norm, act, rng);
    };
    t.encoder.push_back(block(1, c8, 4, 2, 1, false, true, Activation::relu));
    t.encoder.push_back(block(c8, c4, 4, 2, 1, false, true, Activation::relu));
    t.encoder.push_back(block(c4, c2, 4, 2, 1, false, true, Activation::relu));
    t.encoder.push_back(block(c2, c, 4, 2, 1, false, true, Activation::relu));
    t.encoder.push_back(block(c, c, 3, 1, 1, false, true, Activation::relu));
    for (int i = 0; i < cfg.depth; ++i)
        t.infuser.push_back(make_transformer_layer(c, cfg.heads, 4 * c, rng));
    if (me_is_learnable(cfg.mode))
        t.me_table = Tensor::randn({cfg.modalities, c}, rng, 0.02, true);
    else
        t.me_table = modality_encoding_table(cfg.modalities, c, cfg.me_classic);
    t.decoder.push_back(block(c, c, 3, 1, 1, false, true, Activation::relu));
    t.decoder.push_back(block(c, c2, 4, 2, 1, true, true, Activation::relu));
    t.decoder.push_back(block(c2, c4, 4, 2, 1, true, true, Activation::relu));
    t.decoder.push_back(block(c4, c8, 4, 2, 1, true, true, Activation::relu));
    t.decoder.push_back(block(c8, 1, 4, 2, 1, true, false, Activation::tanh));
    return t;
}

Discriminator init_discriminator(const ModelConfig& cfg, std::uint64_t seed) {
    validate(cfg);
    Rng rng(mix_seed(seed, 0x646973));  // discriminator stream
    Discriminator d;
    d.cfg = cfg;
    const int c = cfg.channels;
    const int c8 = c / 8, c4 = c / 4, c2 = c / 2;
    auto block = [&](int cin, int cout, bool with_norm) {
        return make_conv_block(cin, cout, 4, 2, 1, false, with_norm, Activation::leaky_relu,
                               rng);
    };
    d.trunk.push_back(block(1, c8, false));  // no norm on the raw image stage
    d.trunk.push_back(block(c8, c4, true));
    d.trunk.push_back(block(c4, c2, true));
    d.trunk.push_back(block(c2, c, true));
    const double head_std = 1.0 / std::sqrt(static_cast<double>(c));
    d.real_w = Tensor::randn({c, 1}, rng, head_std, true);
    d.real_b = Tensor::zeros({1}, true);
    d.aux_w = Tensor::randn({c, cfg.modalities}, rng, head_std, true);
    d.aux_b = Tensor::zeros({cfg.modalities}, true);
    return d;
}

Model init_model(const ModelConfig& cfg, std::uint64_t seed) {
    return Model{init_translator(cfg, seed), init_discriminator(cfg, seed)};
}

namespace {

Tensor as_batch(const char* op, const Tensor& x) {
    if (x.dim() != 3 || x.shape()[0] != 1)
        throw TensorError(std::string(op) + ": expected a [1,H,W] image, got " +
                          shape_str(x.shape()));
    return reshape(x, {1, 1, x.shape()[1], x.shape()[2]});
}

}  // namespace

Tensor encode(const Tensor& x, const Translator& t) {
    Tensor b = as_batch("encode", x);
    const int h = b.shape()[2], w = b.shape()[3];
    if (h % 16 != 0 || w % 16 != 0)
        throw TensorError("encode: spatial dims must be divisible by 16, got " +
                          shape_str(x.shape()));
    for (const ConvBlock& blk : t.encoder) b = conv_block(b, blk);
    return reshape(b, {t.cfg.channels, h / 16, w / 16});
}

Tensor infuse(const Tensor& f, int m_y, const Translator& t) {
    if (f.dim() != 3 || f.shape()[0] != t.cfg.channels)
        throw TensorError("infuse: expected [C,h,w] features with C=" +
                          std::to_string(t.cfg.channels) + ", got " + shape_str(f.shape()));
    if (m_y < 0 || m_y >= t.cfg.modalities)
        throw TensorError("infuse: modality " + std::to_string(m_y) + " out of range [0," +
                          std::to_string(t.cfg.modalities) + ")");
    const int c = t.cfg.channels;
    const int h = f.shape()[1], w = f.shape()[2];
    const int n = h * w;
    Tensor z = transpose(reshape(f, {c, n}), 0, 1);  // [N,C] token sequence
    z = add(z, positional_encoding(n, c));
    Tensor me = slice(t.me_table, 0, m_y, 1);  // [1,C], broadcast over positions
    for (std::size_t i = 0; i < t.infuser.size(); ++i) {
        const bool inject = t.cfg.mode == MEMode::single ? (i == 0) : true;
        if (inject) z = add(z, me);
        z = transformer_layer(z, t.infuser[i]);
    }
    return reshape(transpose(z, 0, 1), {c, h, w});
}

Tensor decode(const Tensor& f, const Translator& t) {
    if (f.dim() != 3 || f.shape()[0] != t.cfg.channels)
        throw TensorError("decode: expected [C,h,w] features with C=" +
                          std::to_string(t.cfg.channels) + ", got " + shape_str(f.shape()));
    Tensor b = reshape(f, {1, t.cfg.channels, f.shape()[1], f.shape()[2]});
    for (const ConvBlock& blk : t.decoder) b = conv_block(b, blk);
    return reshape(b, {1, b.shape()[2], b.shape()[3]});
}

Tensor translate(const Tensor& x, int m_y, const Translator& t) {
    return decode(infuse(encode(x, t), m_y, t), t);
}

std::pair<Tensor, Tensor> discriminate(const Tensor& x, const Discriminator& d) {
    Tensor b = as_batch("discriminate", x);
    if (b.shape()[2] % 16 != 0 || b.shape()[3] % 16 != 0)
        throw TensorError("discriminate: spatial dims must be divisible by 16, got " +
                          shape_str(x.shape()));
    for (const ConvBlock& blk : d.trunk) b = conv_block(b, blk);
    Tensor pooled = mean_last_axes(b, 2);  // [1,C]
    Tensor real = reshape(add(matmul(pooled, d.real_w), d.real_b), {});
    Tensor aux = reshape(add(matmul(pooled, d.aux_w), d.aux_b), {d.cfg.modalities});
    return {real, aux};
}

NamedParams translator_params(const Translator& t) {
    NamedParams out;
    for (std::size_t i = 0; i < t.encoder.size(); ++i)
        append_params(out, "g.enc" + std::to_string(i), t.encoder[i]);
    for (std::size_t i = 0; i < t.infuser.size(); ++i)
        append_params(out, "g.mi" + std::to_string(i), t.infuser[i]);
    if (me_is_learnable(t.cfg.mode)) out.emplace_back("g.me_table", t.me_table);
    for (std::size_t i = 0; i < t.decoder.size(); ++i)
        append_params(out, "g.dec" + std::to_string(i), t.decoder[i]);
    return out;
}

NamedParams discriminator_params(const Discriminator& d) {
    NamedParams out;
    for (std::size_t i = 0; i < d.trunk.size(); ++i)
        append_params(out, "d.trunk" + std::to_string(i), d.trunk[i]);
    out.emplace_back("d.real_w", d.real_w);
    out.emplace_back("d.real_b", d.real_b);
    out.emplace_back("d.aux_w", d.aux_w);
    out.emplace_back("d.aux_b", d.aux_b);
    return out;
}

NamedParams model_params(const Model& m) {
    NamedParams out = translator_params(m.g);
    NamedParams d = discriminator_params(m.d);
    out.insert(out.end(), d.begin(), d.end());
    return out;
}

void save_checkpoint(const std::string& path, const Model& m) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open checkpoint for writing: " + path);
    write_bytes(os, "MFZ1", 4);
    write_u32(os, static_cast<std::uint32_t>(m.g.cfg.channels));
    write_u32(os, static_cast<std::uint32_t>(m.g.cfg.depth));
    write_u32(os, static_cast<std::uint32_t>(m.g.cfg.modalities));
    write_u32(os, static_cast<std::uint32_t>(m.g.cfg.heads));
    write_u8(os, static_cast<std::uint8_t>(m.g.cfg.mode));
    write_u8(os, m.g.cfg.me_classic ? 1 : 0);
    write_u16(os, 0);  // reserved
    NamedParams params = model_params(m);
    write_u32(os, static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, tensor] : params) {
        write_str(os, name);
        const Shape& s = tensor.shape();
        write_u8(os, static_cast<std::uint8_t>(s.size()));
        for (int d : s) write_u32(os, static_cast<std::uint32_t>(d));
        write_u64(os, static_cast<std::uint64_t>(tensor.size()));
        for (double v : tensor.data()) write_f64(os, v);
    }
    if (!os) throw FormatError("checkpoint write failed: " + path);
}

Model load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open checkpoint: " + path);
    char magic[4];
    read_bytes(is, magic, 4);
    if (std::string(magic, 4) != "MFZ1")
        throw FormatError("not a checkpoint file (bad magic): " + path);
    ModelConfig cfg;
    cfg.channels = static_cast<int>(read_u32(is));
    cfg.depth = static_cast<int>(read_u32(is));
    cfg.modalities = static_cast<int>(read_u32(is));
    cfg.heads = static_cast<int>(read_u32(is));
    const std::uint8_t mode = read_u8(is);
    if (mode > 3) throw FormatError("checkpoint has unknown modality-encoding mode");
    cfg.mode = static_cast<MEMode>(mode);
    cfg.me_classic = read_u8(is) != 0;
    read_u16(is);  // reserved
    Model m = init_model(cfg, 0);
    NamedParams params = model_params(m);
    std::map<std::string, Tensor*> index;
    std::map<std::string, bool> seen;
    for (auto& [name, tensor] : params) {
        index[name] = &tensor;
        seen[name] = false;
    }
    const std::uint32_t count = read_u32(is);
    if (count != params.size())
        throw FormatError("checkpoint holds " + std::to_string(count) + " parameters, model " +
                          std::to_string(params.size()));
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = read_str(is);
        auto it = index.find(name);
        if (it == index.end()) throw FormatError("checkpoint has unknown parameter: " + name);
        if (seen[name]) throw FormatError("checkpoint repeats parameter: " + name);
        seen[name] = true;
        const int ndim = read_u8(is);
        Shape s(static_cast<std::size_t>(ndim));
        for (int d = 0; d < ndim; ++d) s[static_cast<std::size_t>(d)] =
            static_cast<int>(read_u32(is));
        const std::uint64_t n = read_u64(is);
        Tensor& target = *it->second;
        if (s != target.shape() || n != static_cast<std::uint64_t>(target.size()))
            throw FormatError("checkpoint parameter " + name + " has shape " + shape_str(s) +
                              ", model expects " + shape_str(target.shape()));
        std::vector<double>& dst = target.mutable_data();
        for (std::uint64_t j = 0; j < n; ++j) dst[static_cast<std::size_t>(j)] = read_f64(is);
    }
    return m;
}

}  // namespace modfuser
