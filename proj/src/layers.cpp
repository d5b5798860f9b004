#include "modfuser/layers.hpp"

#include <cmath>

namespace modfuser {

ConvBlock make_conv_block(int cin, int cout, int k, int stride, int padding, bool transposed,
                          bool with_norm, Activation act, Rng& rng) {
    if (stride != 1 && stride != 2)
        throw TensorError("make_conv_block: stride must be 1 or 2, got " +
                          std::to_string(stride));
    ConvBlock b;
    const double stddev = std::sqrt(2.0 / (static_cast<double>(cin) * k * k));
    Shape kshape = transposed ? Shape{cin, cout, k, k} : Shape{cout, cin, k, k};
    b.kernel = Tensor::randn(std::move(kshape), rng, stddev, true);
    b.bias = Tensor::zeros({cout, 1, 1}, true);
    if (with_norm) {
        b.norm_gain = Tensor::full({cout, 1, 1}, 1.0, true);
        b.norm_bias = Tensor::zeros({cout, 1, 1}, true);
    }
    b.act = act;
    b.stride = stride;
    b.padding = padding;
    b.transposed = transposed;
    return b;
}

Tensor conv_block(const Tensor& x, const ConvBlock& blk) {
    Tensor y = blk.transposed ? conv2d_transpose(x, blk.kernel, blk.stride, blk.padding)
                              : conv2d(x, blk.kernel, blk.stride, blk.padding);
    y = add(y, blk.bias);
    if (blk.norm_gain.defined())
        y = add(mul(normalize_last_axes(y, 2, 1e-5), blk.norm_gain), blk.norm_bias);
    switch (blk.act) {
        case Activation::none:
            break;
        case Activation::relu:
            y = relu(y);
            break;
        case Activation::leaky_relu:
            y = leaky_relu(y, 0.2);
            break;
        case Activation::gelu:
            y = gelu(y);
            break;
        case Activation::tanh:
            y = tanh(y);
            break;
    }
    return y;
}

TransformerLayer make_transformer_layer(int c, int heads, int ffn_width, Rng& rng) {
    if (heads < 1 || c % heads != 0)
        throw TensorError("make_transformer_layer: width " + std::to_string(c) +
                          " not divisible by " + std::to_string(heads) + " heads");
    TransformerLayer p;
    const double proj_std = 1.0 / std::sqrt(static_cast<double>(c));
    p.wq = Tensor::randn({c, c}, rng, proj_std, true);
    p.wk = Tensor::randn({c, c}, rng, proj_std, true);
    p.wv = Tensor::randn({c, c}, rng, proj_std, true);
    p.wo = Tensor::randn({c, c}, rng, proj_std, true);
    p.bq = Tensor::zeros({c}, true);
    p.bk = Tensor::zeros({c}, true);
    p.bv = Tensor::zeros({c}, true);
    p.bo = Tensor::zeros({c}, true);
    p.w1 = Tensor::randn({c, ffn_width}, rng, proj_std, true);
    p.b1 = Tensor::zeros({ffn_width}, true);
    p.w2 = Tensor::randn({ffn_width, c}, rng,
                         1.0 / std::sqrt(static_cast<double>(ffn_width)), true);
    p.b2 = Tensor::zeros({c}, true);
    p.n1_gain = Tensor::full({c}, 1.0, true);
    p.n1_bias = Tensor::zeros({c}, true);
    p.n2_gain = Tensor::full({c}, 1.0, true);
    p.n2_bias = Tensor::zeros({c}, true);
    p.heads = heads;
    return p;
}

Tensor self_attention(const Tensor& z, const TransformerLayer& p) {
    if (z.dim() != 2)
        throw TensorError("self_attention: tokens must be [N,C], got " + shape_str(z.shape()));
    const int c = p.wq.shape()[0];
    if (z.shape()[1] != c)
        throw TensorError("self_attention: token width " + std::to_string(z.shape()[1]) +
                          " does not match projection width " + std::to_string(c));
    if (c % p.heads != 0)
        throw TensorError("self_attention: width " + std::to_string(c) +
                          " not divisible by " + std::to_string(p.heads) + " heads");
    const int d = c / p.heads;
    Tensor q = add(matmul(z, p.wq), p.bq);
    Tensor k = add(matmul(z, p.wk), p.bk);
    Tensor v = add(matmul(z, p.wv), p.bv);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<Tensor> heads;
    heads.reserve(static_cast<std::size_t>(p.heads));
    for (int i = 0; i < p.heads; ++i) {
        Tensor qi = slice(q, 1, i * d, d);
        Tensor ki = slice(k, 1, i * d, d);
        Tensor vi = slice(v, 1, i * d, d);
        Tensor attn = softmax(scale(matmul(qi, transpose(ki, 0, 1)), inv_sqrt_d), 1);
        heads.push_back(matmul(attn, vi));
    }
    Tensor cat = p.heads == 1 ? heads[0] : concat(heads, 1);
    return add(matmul(cat, p.wo), p.bo);
}

Tensor transformer_layer(const Tensor& z, const TransformerLayer& p) {
    Tensor a = add(z, self_attention(layer_norm(z, p.n1_gain, p.n1_bias), p));
    Tensor u = layer_norm(a, p.n2_gain, p.n2_bias);
    Tensor f = add(matmul(gelu(add(matmul(u, p.w1), p.b1)), p.w2), p.b2);
    return add(a, f);
}

Tensor positional_encoding(int n, int c) {
    if (c < 2 || c % 2 != 0)
        throw TensorError("positional_encoding: width must be even, got " + std::to_string(c));
    if (n < 1) throw TensorError("positional_encoding: need at least one position");
    std::vector<double> v(static_cast<std::size_t>(n) * c);
    for (int pos = 0; pos < n; ++pos)
        for (int i = 0; i < c / 2; ++i) {
            const double denom = std::pow(10000.0, (2.0 * i) / c);
            v[static_cast<std::size_t>(pos) * c + 2 * i] = std::sin(pos / denom);
            v[static_cast<std::size_t>(pos) * c + 2 * i + 1] = std::cos(pos / denom);
        }
    return Tensor::from_data({n, c}, std::move(v));
}

void append_params(NamedParams& out, const std::string& prefix, const ConvBlock& blk) {
    out.emplace_back(prefix + ".kernel", blk.kernel);
    out.emplace_back(prefix + ".bias", blk.bias);
    if (blk.norm_gain.defined()) {
        out.emplace_back(prefix + ".norm_gain", blk.norm_gain);
        out.emplace_back(prefix + ".norm_bias", blk.norm_bias);
    }
}

void append_params(NamedParams& out, const std::string& prefix, const TransformerLayer& p) {
    out.emplace_back(prefix + ".wq", p.wq);
    out.emplace_back(prefix + ".bq", p.bq);
    out.emplace_back(prefix + ".wk", p.wk);
    out.emplace_back(prefix + ".bk", p.bk);
    out.emplace_back(prefix + ".wv", p.wv);
    out.emplace_back(prefix + ".bv", p.bv);
    out.emplace_back(prefix + ".wo", p.wo);
    out.emplace_back(prefix + ".bo", p.bo);
    out.emplace_back(prefix + ".w1", p.w1);
    out.emplace_back(prefix + ".b1", p.b1);
    out.emplace_back(prefix + ".w2", p.w2);
    out.emplace_back(prefix + ".b2", p.b2);
    out.emplace_back(prefix + ".n1_gain", p.n1_gain);
    out.emplace_back(prefix + ".n1_bias", p.n1_bias);
    out.emplace_back(prefix + ".n2_gain", p.n2_gain);
    out.emplace_back(prefix + ".n2_bias", p.n2_bias);
}

}  // namespace modfuser
