#pragma once

#include <string>
#include <utility>
#include <vector>

#include "modfuser/tensor.hpp"

namespace modfuser {

enum class Activation { none, relu, leaky_relu, gelu, tanh };

// One convolutional stage: (transpose-)conv -> bias -> optional instance
// norm -> activation. Instance norm statistics are per channel over the
// spatial axes.
struct ConvBlock {
    Tensor kernel;     // conv: [Cout,Cin,kh,kw]; transposed: [Cin,Cout,kh,kw]
    Tensor bias;       // [Cout,1,1]
    Tensor norm_gain;  // [Cout,1,1]; leave undefined to skip the norm
    Tensor norm_bias;  // [Cout,1,1]
    Activation act = Activation::relu;
    int stride = 1;
    int padding = 0;
    bool transposed = false;
};

ConvBlock make_conv_block(int cin, int cout, int k, int stride, int padding, bool transposed,
                          bool with_norm, Activation act, Rng& rng);

// x is [B,Cin,H,W].
Tensor conv_block(const Tensor& x, const ConvBlock& blk);

struct TransformerLayer {
    Tensor wq, wk, wv, wo;                      // [C,C]
    Tensor bq, bk, bv, bo;                      // [C]
    Tensor w1, b1, w2, b2;                      // [C,F], [F], [F,C], [C]
    Tensor n1_gain, n1_bias, n2_gain, n2_bias;  // [C]
    int heads = 4;
};

TransformerLayer make_transformer_layer(int c, int heads, int ffn_width, Rng& rng);

// z is [N,C]; scaled dot-product attention over all N positions, heads
// concatenated and output-projected.
Tensor self_attention(const Tensor& z, const TransformerLayer& p);

// Pre-norm residual composition: z' = z + attn(norm1(z)); out = z' +
// ffn(norm2(z')).
Tensor transformer_layer(const Tensor& z, const TransformerLayer& p);

// Fixed sinusoidal table: PE(p,2i) = sin(p/10000^(2i/C)), PE(p,2i+1) =
// cos(p/10000^(2i/C)). Not a learnable parameter.
Tensor positional_encoding(int n, int c);

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

void append_params(NamedParams& out, const std::string& prefix, const ConvBlock& blk);
void append_params(NamedParams& out, const std::string& prefix, const TransformerLayer& p);

}  // namespace modfuser
