#pragma once

#include "modfuser/tensor.hpp"

namespace modfuser {

struct LossWeights {
    double alpha = 10.0;    // reconstruction
    double beta = 1.0;      // disentanglement
    double gamma = 1.0;     // cycle
    double lambda1 = 0.25;  // adversarial
    double lambda2 = 0.25;  // auxiliary classification
};

// One training step's scalar losses. total_g is always derived from the
// other fields through combine_generator_loss so logs can be re-checked
// exactly.
struct LossReport {
    double rec = 0.0;
    double disen = 0.0;
    double cyc = 0.0;
    double adv_g = 0.0;
    double aux_g = 0.0;
    double total_g = 0.0;
    double adv_d = 0.0;
    double aux_d = 0.0;
};

// Mean absolute difference; used for reconstruction, disentanglement, and
// cycle terms alike.
Tensor l_rec(const Tensor& target, const Tensor& synthesized);
Tensor l_disen(const Tensor& f_x, const Tensor& f_translated);
Tensor l_cyc(const Tensor& x, const Tensor& cycled);

// Non-saturating binary cross-entropy on the real/fake logit. The
// discriminator drives real logits up and fake logits down; the generator
// drives fake logits up. Both are returned as minimization losses.
Tensor l_adv_d(const Tensor& real_logit, const Tensor& fake_logit);
Tensor l_adv_g(const Tensor& fake_logit);

// -log softmax(logits)[m].
Tensor l_aux(const Tensor& modality_logits, int m);

// alpha*rec + beta*disen + gamma*cyc + lambda1*adv + lambda2*aux, combined
// left to right. The tensor and plain-double versions share this order so a
// logged total can be recomputed bit-exactly from its parts.
Tensor total_generator_loss(const Tensor& rec, const Tensor& disen, const Tensor& cyc,
                            const Tensor& adv, const Tensor& aux, const LossWeights& w);
double combine_generator_loss(const LossReport& parts, const LossWeights& w);
double combine_discriminator_loss(const LossReport& parts, const LossWeights& w);

}  // namespace modfuser
