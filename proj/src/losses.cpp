#include "modfuser/losses.hpp"

namespace modfuser {

namespace {

Tensor mean_abs_diff(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw TensorError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                          " vs " + shape_str(b.shape()));
    return mean_all(abs(sub(a, b)));
}

Tensor scalar_only(const char* op, const Tensor& t) {
    if (t.size() != 1)
        throw TensorError(std::string(op) + ": expected a scalar logit, got " +
                          shape_str(t.shape()));
    return t;
}

}  // namespace

Tensor l_rec(const Tensor& target, const Tensor& synthesized) {
    return mean_abs_diff("l_rec", target, synthesized);
}

Tensor l_disen(const Tensor& f_x, const Tensor& f_translated) {
    return mean_abs_diff("l_disen", f_x, f_translated);
}

Tensor l_cyc(const Tensor& x, const Tensor& cycled) {
    return mean_abs_diff("l_cyc", x, cycled);
}

// -log sigmoid(x) = softplus(-x) and -log(1 - sigmoid(x)) = softplus(x),
// both stable at extreme logits.
Tensor l_adv_d(const Tensor& real_logit, const Tensor& fake_logit) {
    Tensor r = scalar_only("l_adv_d", real_logit);
    Tensor f = scalar_only("l_adv_d", fake_logit);
    return add(softplus(neg(r)), softplus(f));
}

Tensor l_adv_g(const Tensor& fake_logit) {
    return softplus(neg(scalar_only("l_adv_g", fake_logit)));
}

Tensor l_aux(const Tensor& modality_logits, int m) {
    return cross_entropy_logits(modality_logits, m);
}

Tensor total_generator_loss(const Tensor& rec, const Tensor& disen, const Tensor& cyc,
                            const Tensor& adv, const Tensor& aux, const LossWeights& w) {
    Tensor total = add(scale(rec, w.alpha), scale(disen, w.beta));
    total = add(total, scale(cyc, w.gamma));
    total = add(total, scale(adv, w.lambda1));
    total = add(total, scale(aux, w.lambda2));
    return total;
}

double combine_generator_loss(const LossReport& parts, const LossWeights& w) {
    double total = parts.rec * w.alpha + parts.disen * w.beta;
    total = total + parts.cyc * w.gamma;
    total = total + parts.adv_g * w.lambda1;
    total = total + parts.aux_g * w.lambda2;
    return total;
}

double combine_discriminator_loss(const LossReport& parts, const LossWeights& w) {
    return parts.adv_d + parts.aux_d * w.lambda2;
}

}  // namespace modfuser
