#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "modfuser/layers.hpp"
#include "modfuser/tensor.hpp"

namespace modfuser {

// How the modality encoding enters the infuser:
//   single       -- fixed sinusoidal row added before the first layer only
//   consecutive  -- fixed sinusoidal row added before every layer
//   learnable    -- trained per-modality vectors, added before every layer
//   learnable_high_rec -- learnable, trained with reconstruction weight 50
enum class MEMode { single, consecutive, learnable, learnable_high_rec };

const char* me_mode_name(MEMode mode);
std::optional<MEMode> parse_me_mode(const std::string& name);
bool me_is_learnable(MEMode mode);

struct ModelConfig {
    int channels = 64;  // C; even, divisible by heads
    int depth = 4;      // T transformer layers
    int modalities = 4; // M
    int heads = 4;
    MEMode mode = MEMode::consecutive;
    bool me_classic = false;  // cosine exponent 2i/C instead of (2i+1)/C
};

void validate(const ModelConfig& cfg);

// Sinusoidal modality encoding, one row of width c:
//   ME(m,2i)   = sin(m / 10000^(2i/C))
//   ME(m,2i+1) = cos(m / 10000^((2i+1)/C))
// The cosine exponent is deliberately (2i+1)/C; classic=true switches it to
// the symmetric 2i/C form.
Tensor modality_encoding(int m, int c, bool classic = false);

// All M rows stacked to [M,C].
Tensor modality_encoding_table(int m_count, int c, bool classic = false);

struct Translator {
    ModelConfig cfg;
    std::vector<ConvBlock> encoder;         // 4 stride-2 blocks + 1 stride-1 block
    std::vector<TransformerLayer> infuser;  // T layers
    Tensor me_table;                        // [M,C]; learnable only in learnable modes
    std::vector<ConvBlock> decoder;         // mirror of the encoder
};

struct Discriminator {
    ModelConfig cfg;
    std::vector<ConvBlock> trunk;  // 4 stride-2 blocks, global average pooled
    Tensor real_w, real_b;         // [C,1], [1]: real/fake logit head
    Tensor aux_w, aux_b;           // [C,M], [M]: modality classification head
};

struct Model {
    Translator g;
    Discriminator d;
};

Translator init_translator(const ModelConfig& cfg, std::uint64_t seed);
Discriminator init_discriminator(const ModelConfig& cfg, std::uint64_t seed);
Model init_model(const ModelConfig& cfg, std::uint64_t seed);

// x is a single image [1,H,W] with H,W divisible by 16; features come back
// as [C,H/16,W/16].
Tensor encode(const Tensor& x, const Translator& t);

// Conditions features on the target modality: flatten to [N,C], add the
// positional encoding once, add the modality row per the mode's schedule,
// run the T transformer layers, reshape back.
Tensor infuse(const Tensor& f, int m_y, const Translator& t);

// [C,h,w] -> [1,16h,16w], final tanh keeps values in [-1,1].
Tensor decode(const Tensor& f, const Translator& t);

// decode(infuse(encode(x), m_y)).
Tensor translate(const Tensor& x, int m_y, const Translator& t);

// Returns (real/fake logit, modality logits[M]) from the shared trunk.
std::pair<Tensor, Tensor> discriminate(const Tensor& x, const Discriminator& d);

// Learnable parameters in a fixed, documented order; names are stable and
// used as checkpoint keys ("g.enc0.kernel", "d.aux_w", ...).
NamedParams translator_params(const Translator& t);
NamedParams discriminator_params(const Discriminator& d);
NamedParams model_params(const Model& m);

// Versioned binary checkpoint, magic "MFZ1"; layout in docs/FORMATS.md.
void save_checkpoint(const std::string& path, const Model& m);
Model load_checkpoint(const std::string& path);

}  // namespace modfuser
