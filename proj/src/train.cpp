#include "modfuser/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "modfuser/binio.hpp"
#include "modfuser/metrics.hpp"
#include "modfuser/rng.hpp"

namespace modfuser {

namespace {

void ensure_finite(double v, const char* term) {
    if (!std::isfinite(v))
        throw TrainAbort(std::string("NaN abort: ") + term + " loss is not finite");
}

void zero_grads(const NamedParams& params) {
    for (const auto& [name, p] : params) p.node()->grad.clear();
}

std::string sidecar_path(const std::string& ckpt_path) {
    if (ckpt_path.size() >= 4 && ckpt_path.compare(ckpt_path.size() - 4, 4, ".mfz") == 0)
        return ckpt_path.substr(0, ckpt_path.size() - 4) + ".mfs";
    return ckpt_path + ".mfs";
}

void write_adam(std::ostream& os, const AdamState& s) {
    write_u64(os, static_cast<std::uint64_t>(s.step));
    write_u64(os, s.m.size());
    for (std::size_t i = 0; i < s.m.size(); ++i) {
        write_u64(os, s.m[i].size());
        for (double v : s.m[i]) write_f64(os, v);
        for (double v : s.v[i]) write_f64(os, v);
    }
}

void read_adam(std::istream& is, AdamState& s) {
    s.step = static_cast<std::int64_t>(read_u64(is));
    const std::uint64_t arrays = read_u64(is);
    if (arrays != s.m.size())
        throw TrainError("train state holds " + std::to_string(arrays) +
                         " parameter arrays, model has " + std::to_string(s.m.size()));
    for (std::size_t i = 0; i < s.m.size(); ++i) {
        const std::uint64_t len = read_u64(is);
        if (len != s.m[i].size())
            throw TrainError("train state array " + std::to_string(i) + " length mismatch");
        for (auto& v : s.m[i]) v = read_f64(is);
        for (auto& v : s.v[i]) v = read_f64(is);
    }
}

void save_train_state(const std::string& path, int epoch, double best_val, int best_epoch,
                      const AdamState& gs, const AdamState& ds) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw TrainError("cannot open train state for writing: " + path);
    write_bytes(os, "MFS1", 4);
    write_u64(os, static_cast<std::uint64_t>(epoch));
    write_f64(os, best_val);
    write_u64(os, static_cast<std::uint64_t>(best_epoch));
    write_adam(os, gs);
    write_adam(os, ds);
    if (!os) throw TrainError("train state write failed: " + path);
}

void load_train_state(const std::string& path, int& epoch, double& best_val, int& best_epoch,
                      AdamState& gs, AdamState& ds) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw TrainError("cannot open train state: " + path);
    try {
        char magic[4];
        read_bytes(is, magic, 4);
        if (std::string(magic, 4) != "MFS1")
            throw TrainError("not a train state file: " + path);
        epoch = static_cast<int>(read_u64(is));
        best_val = read_f64(is);
        best_epoch = static_cast<int>(read_u64(is));
        read_adam(is, gs);
        read_adam(is, ds);
    } catch (const FormatError& e) {
        throw TrainError("train state " + path + ": " + e.what());
    }
}

void write_manifest(const std::string& path, const TrainConfig& cfg, int modalities,
                    std::size_t train_slices, std::size_t val_slices) {
    std::ofstream os(path);
    if (!os) throw TrainError("cannot open run manifest for writing: " + path);
    os << std::setprecision(17);
    os << "epochs=" << cfg.epochs << "\n";
    os << "batch=" << cfg.batch << "\n";
    os << "lr_g=" << cfg.lr_g << "\n";
    os << "lr_d=" << cfg.lr_d << "\n";
    os << "alpha=" << cfg.weights.alpha << "\n";
    os << "beta=" << cfg.weights.beta << "\n";
    os << "gamma=" << cfg.weights.gamma << "\n";
    os << "lambda1=" << cfg.weights.lambda1 << "\n";
    os << "lambda2=" << cfg.weights.lambda2 << "\n";
    os << "mode=" << me_mode_name(cfg.mode) << "\n";
    os << "me_classic=" << (cfg.me_classic ? 1 : 0) << "\n";
    os << "channels=" << cfg.channels << "\n";
    os << "depth=" << cfg.depth << "\n";
    os << "heads=" << cfg.heads << "\n";
    os << "seed=" << cfg.seed << "\n";
    os << "checkpoint_every=" << cfg.checkpoint_every << "\n";
    os << "clip_norm=" << cfg.clip_norm << "\n";
    os << "disen_detach=" << (cfg.disen_detach ? 1 : 0) << "\n";
    os << "max_steps_per_epoch=" << cfg.max_steps_per_epoch << "\n";
    os << "val_max_slices=" << cfg.val_max_slices << "\n";
    os << "deterministic=" << (cfg.deterministic ? 1 : 0) << "\n";
    os << "resume=" << cfg.resume << "\n";
    os << "modalities=" << modalities << "\n";
    os << "train_slices=" << train_slices << "\n";
    os << "val_slices=" << val_slices << "\n";
    if (!os) throw TrainError("run manifest write failed: " + path);
}

void write_loss_row(std::ostream& os, std::int64_t step, const LossReport& r,
                    std::int64_t wall_ms) {
    os << step << ',' << r.rec << ',' << r.disen << ',' << r.cyc << ',' << r.adv_g << ','
       << r.aux_g << ',' << r.total_g << ',' << r.adv_d << ',' << r.aux_d << ',' << wall_ms
       << '\n';
}

void save_both(const std::string& ckpt, const Model& model, int epoch, double best_val,
               int best_epoch, const AdamState& gs, const AdamState& ds) {
    save_checkpoint(ckpt, model);
    save_train_state(sidecar_path(ckpt), epoch, best_val, best_epoch, gs, ds);
}

constexpr std::uint64_t kEpochTag = 0x65706f6368;  // stream tag for per-epoch draws

}  // namespace

void validate(const TrainConfig& cfg) {
    if (cfg.epochs < 0) throw TrainError("train config: epochs must be >= 0");
    if (cfg.batch < 1) throw TrainError("train config: batch must be >= 1");
    if (cfg.lr_g < 0.0 || cfg.lr_d < 0.0)
        throw TrainError("train config: learning rates must be >= 0");
    if (cfg.weights.alpha < 0.0 || cfg.weights.beta < 0.0 || cfg.weights.gamma < 0.0 ||
        cfg.weights.lambda1 < 0.0 || cfg.weights.lambda2 < 0.0)
        throw TrainError("train config: loss weights must be >= 0");
    if (cfg.checkpoint_every < 0)
        throw TrainError("train config: checkpoint_every must be >= 0");
    if (cfg.clip_norm < 0.0) throw TrainError("train config: clip_norm must be >= 0");
    if (cfg.max_steps_per_epoch < 0)
        throw TrainError("train config: max_steps_per_epoch must be >= 0");
    if (cfg.val_max_slices < 0)
        throw TrainError("train config: val_max_slices must be >= 0");
}

ModelConfig model_config(const TrainConfig& cfg, int modalities) {
    ModelConfig mc;
    mc.channels = cfg.channels;
    mc.depth = cfg.depth;
    mc.modalities = modalities;
    mc.heads = cfg.heads;
    mc.mode = cfg.mode;
    mc.me_classic = cfg.me_classic;
    return mc;
}

AdamState make_adam_state(const NamedParams& params) {
    AdamState s;
    s.m.reserve(params.size());
    s.v.reserve(params.size());
    for (const auto& [name, p] : params) {
        s.m.emplace_back(static_cast<std::size_t>(p.size()), 0.0);
        s.v.emplace_back(static_cast<std::size_t>(p.size()), 0.0);
    }
    return s;
}

void adam_step(const NamedParams& params, AdamState& state, double lr) {
    if (params.size() != state.m.size())
        throw TrainError("adam_step: state holds " + std::to_string(state.m.size()) +
                         " arrays for " + std::to_string(params.size()) + " parameters");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Tensor& p = params[i].second;
        std::vector<double>& theta = p.node()->data;
        const std::vector<double>& g = p.node()->grad;
        std::vector<double>& m = state.m[i];
        std::vector<double>& v = state.v[i];
        if (theta.size() != m.size())
            throw TrainError("adam_step: parameter " + params[i].first + " has " +
                             std::to_string(theta.size()) + " values, state has " +
                             std::to_string(m.size()));
        if (!g.empty() && g.size() != theta.size())
            throw TrainError("adam_step: gradient size mismatch on " + params[i].first);
        for (std::size_t j = 0; j < theta.size(); ++j) {
            const double gj = g.empty() ? 0.0 : g[j];
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * gj;
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * gj * gj;
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            theta[j] -= lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

double clip_gradients(const NamedParams& params, double clip_norm) {
    double sq = 0.0;
    for (const auto& [name, p] : params)
        for (double g : p.node()->grad) sq += g * g;
    const double norm = std::sqrt(sq);
    if (clip_norm > 0.0 && norm > clip_norm) {
        const double factor = clip_norm / norm;
        for (const auto& [name, p] : params)
            for (double& g : p.node()->grad) g *= factor;
    }
    return norm;
}

LossReport train_step(Model& model, AdamState& g_state, AdamState& d_state,
                      const std::vector<BatchItem>& batch, const TrainConfig& cfg) {
    if (batch.empty()) throw TrainError("train_step: empty batch");
    const double inv = 1.0 / static_cast<double>(batch.size());
    const NamedParams g_params = translator_params(model.g);
    const NamedParams d_params = discriminator_params(model.d);
    LossReport report;

    // Discriminator phase: real slices up, detached fakes down, plus the
    // modality classification head on both.
    zero_grads(d_params);
    double adv_d_sum = 0.0, aux_d_sum = 0.0;
    for (const BatchItem& item : batch) {
        const Slice& s = *item.slice;
        Tensor x = Tensor::from_data({1, item.height, item.width},
                                     s.planes[static_cast<std::size_t>(item.m_x)]);
        const Tensor fake = translate(x, item.m_y, model.g);  // no tape: detached
        Tape tape;
        TapeScope scope(tape);
        auto [real_logit, real_aux] = discriminate(x, model.d);
        auto [fake_logit, fake_aux] = discriminate(fake, model.d);
        const Tensor adv = l_adv_d(real_logit, fake_logit);
        const Tensor aux = add(l_aux(real_aux, item.m_x), l_aux(fake_aux, item.m_y));
        ensure_finite(adv.value(), "adv_d");
        ensure_finite(aux.value(), "aux_d");
        const Tensor total = add(adv, scale(aux, cfg.weights.lambda2));
        backward(scale(total, inv));
        adv_d_sum += adv.value();
        aux_d_sum += aux.value();
    }
    if (cfg.clip_norm > 0.0) clip_gradients(d_params, cfg.clip_norm);
    adam_step(d_params, d_state, cfg.lr_d);

    // Generator phase: reconstruction, disentanglement, cycle, and fresh
    // discriminator opinions on the (now attached) fakes.
    zero_grads(g_params);
    zero_grads(d_params);  // the G graph also reaches D parameters
    double rec_sum = 0.0, disen_sum = 0.0, cyc_sum = 0.0, adv_g_sum = 0.0, aux_g_sum = 0.0;
    for (const BatchItem& item : batch) {
        const Slice& s = *item.slice;
        Tensor x = Tensor::from_data({1, item.height, item.width},
                                     s.planes[static_cast<std::size_t>(item.m_x)]);
        Tensor truth = Tensor::from_data({1, item.height, item.width},
                                         s.planes[static_cast<std::size_t>(item.m_y)]);
        Tape tape;
        TapeScope scope(tape);
        const Tensor f_x = encode(x, model.g);
        const Tensor fake = decode(infuse(f_x, item.m_y, model.g), model.g);
        const Tensor rec = l_rec(truth, fake);
        const Tensor f_fake = encode(fake, model.g);
        const Tensor disen =
            l_disen(cfg.disen_detach ? f_x.detach() : f_x, f_fake);
        const Tensor cycled = decode(infuse(f_fake, item.m_x, model.g), model.g);
        const Tensor cyc = l_cyc(x, cycled);
        auto [fake_logit, fake_aux] = discriminate(fake, model.d);
        const Tensor adv = l_adv_g(fake_logit);
        const Tensor aux = l_aux(fake_aux, item.m_y);
        ensure_finite(rec.value(), "rec");
        ensure_finite(disen.value(), "disen");
        ensure_finite(cyc.value(), "cyc");
        ensure_finite(adv.value(), "adv_g");
        ensure_finite(aux.value(), "aux_g");
        const Tensor total = total_generator_loss(rec, disen, cyc, adv, aux, cfg.weights);
        backward(scale(total, inv));
        rec_sum += rec.value();
        disen_sum += disen.value();
        cyc_sum += cyc.value();
        adv_g_sum += adv.value();
        aux_g_sum += aux.value();
    }
    if (cfg.clip_norm > 0.0) clip_gradients(g_params, cfg.clip_norm);
    adam_step(g_params, g_state, cfg.lr_g);

    report.rec = rec_sum * inv;
    report.disen = disen_sum * inv;
    report.cyc = cyc_sum * inv;
    report.adv_g = adv_g_sum * inv;
    report.aux_g = aux_g_sum * inv;
    report.adv_d = adv_d_sum * inv;
    report.aux_d = aux_d_sum * inv;
    report.total_g = combine_generator_loss(report, cfg.weights);
    return report;
}

double validation_l1(const Translator& g, const SlicePack& pack, int max_slices) {
    if (pack.slices.empty()) throw TrainError("validation pack is empty");
    const int m_count = pack.modalities();
    const int h = pack.height, w = pack.width;
    const std::size_t take =
        max_slices > 0 ? std::min<std::size_t>(static_cast<std::size_t>(max_slices),
                                               pack.slices.size())
                       : pack.slices.size();
    double total = 0.0;
    std::int64_t rows = 0;
    for (std::size_t k = 0; k < take; ++k) {
        const Slice& s = pack.slices[k];
        for (int source = 0; source < m_count; ++source) {
            const Tensor x =
                Tensor::from_data({1, h, w}, s.planes[static_cast<std::size_t>(source)]);
            for (int target = 0; target < m_count; ++target) {
                if (target == source) continue;
                const Tensor y = translate(x, target, g);
                const auto& truth = s.planes[static_cast<std::size_t>(target)];
                double acc = 0.0;
                for (std::size_t i = 0; i < truth.size(); ++i)
                    acc += std::abs(y.data()[i] - truth[i]);
                total += acc / static_cast<double>(truth.size());
                rows += 1;
            }
        }
    }
    return total / static_cast<double>(rows);
}

FitResult fit(const SlicePack& train_pack, const SlicePack& val_pack, const TrainConfig& cfg) {
    validate(cfg);
    if (cfg.out_dir.empty()) throw TrainError("fit: out_dir is required");
    if (train_pack.slices.empty()) throw TrainError("fit: training pack is empty");
    if (val_pack.slices.empty()) throw TrainError("fit: validation pack is empty");
    if (train_pack.modality_names != val_pack.modality_names)
        throw TrainError("fit: train and validation packs disagree on modalities");
    const int m_count = train_pack.modalities();
    if (m_count < 2) throw TrainError("fit: need at least 2 modalities to translate");
    const ModelConfig mc = model_config(cfg, m_count);

    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    const fs::path dir(cfg.out_dir);

    FitResult result;
    int start_epoch = 0;
    double best_val = 0.0;
    int best_epoch = 0;
    Model model;
    AdamState gs, ds;
    if (!cfg.resume.empty()) {
        model = load_checkpoint(cfg.resume);
        const ModelConfig& got = model.g.cfg;
        if (got.channels != mc.channels || got.depth != mc.depth ||
            got.modalities != mc.modalities || got.heads != mc.heads || got.mode != mc.mode ||
            got.me_classic != mc.me_classic)
            throw TrainError("fit: resume checkpoint geometry disagrees with the config");
        gs = make_adam_state(translator_params(model.g));
        ds = make_adam_state(discriminator_params(model.d));
        load_train_state(sidecar_path(cfg.resume), start_epoch, best_val, best_epoch, gs, ds);
        if (start_epoch > cfg.epochs)
            throw TrainError("fit: resume checkpoint is already past epoch " +
                             std::to_string(cfg.epochs));
    } else {
        model = init_model(mc, cfg.seed);
        gs = make_adam_state(translator_params(model.g));
        ds = make_adam_state(discriminator_params(model.d));
    }

    write_manifest((dir / "run_manifest.txt").string(), cfg, m_count, train_pack.slices.size(),
                   val_pack.slices.size());

    // Resuming appends to the run's CSVs so an interrupted-then-continued
    // run leaves the same files as an uninterrupted one.
    const bool resuming = !cfg.resume.empty();
    const auto csv_mode = resuming ? std::ios::app : std::ios::out;
    std::ofstream losses_csv(dir / "losses.csv", csv_mode);
    if (!losses_csv) throw TrainError("fit: cannot write losses.csv in " + cfg.out_dir);
    losses_csv << std::setprecision(17);
    if (!resuming) losses_csv << "step,rec,disen,cyc,adv_g,aux_g,total_g,adv_d,aux_d,wall_ms\n";
    std::ofstream val_csv(dir / "val.csv", csv_mode);
    if (!val_csv) throw TrainError("fit: cannot write val.csv in " + cfg.out_dir);
    val_csv << std::setprecision(17);
    if (!resuming) val_csv << "epoch,val_l1\n";

    const double start_val = validation_l1(model.g, val_pack, cfg.val_max_slices);
    result.val_history.push_back(start_val);
    if (!resuming) {
        val_csv << start_epoch << ',' << start_val << '\n';
        best_val = start_val;
        best_epoch = 0;
        save_both((dir / "ckpt_0.mfz").string(), model, 0, best_val, best_epoch, gs, ds);
        save_both((dir / "best.mfz").string(), model, 0, best_val, best_epoch, gs, ds);
    }

    for (int e = start_epoch + 1; e <= cfg.epochs; ++e) {
        Rng rng(mix_seed(cfg.seed, kEpochTag, static_cast<std::uint64_t>(e)));
        std::vector<std::size_t> order(train_pack.slices.size());
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order);
        int steps_this_epoch = 0;
        for (std::size_t pos = 0; pos < order.size();
             pos += static_cast<std::size_t>(cfg.batch)) {
            if (cfg.max_steps_per_epoch > 0 && steps_this_epoch >= cfg.max_steps_per_epoch)
                break;
            std::vector<BatchItem> batch;
            const std::size_t end =
                std::min(pos + static_cast<std::size_t>(cfg.batch), order.size());
            for (std::size_t i = pos; i < end; ++i) {
                BatchItem item;
                item.slice = &train_pack.slices[order[i]];
                item.height = train_pack.height;
                item.width = train_pack.width;
                item.m_x = rng.uniform_int(m_count);
                const int off = rng.uniform_int(m_count - 1);
                item.m_y = off >= item.m_x ? off + 1 : off;
                batch.push_back(item);
            }
            const auto t0 = std::chrono::steady_clock::now();
            LossReport r;
            try {
                r = train_step(model, gs, ds, batch, cfg);
            } catch (const TrainAbort& abort) {
                throw TrainAbort(std::string(abort.what()) + " (epoch " + std::to_string(e) +
                                 ", step " + std::to_string(gs.step + 1) + ")");
            }
            std::int64_t wall_ms = 0;
            if (!cfg.deterministic)
                wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                              std::chrono::steady_clock::now() - t0)
                              .count();
            write_loss_row(losses_csv, gs.step, r, wall_ms);
            steps_this_epoch += 1;
        }
        losses_csv.flush();

        const double val = validation_l1(model.g, val_pack, cfg.val_max_slices);
        val_csv << e << ',' << val << '\n';
        val_csv.flush();
        result.val_history.push_back(val);
        if (val < best_val) {
            best_val = val;
            best_epoch = e;
            save_both((dir / "best.mfz").string(), model, e, best_val, best_epoch, gs, ds);
        }
        const bool cadence_hit = cfg.checkpoint_every > 0 && e % cfg.checkpoint_every == 0;
        if (cadence_hit || e == cfg.epochs)
            save_both((dir / ("ckpt_" + std::to_string(e) + ".mfz")).string(), model, e,
                      best_val, best_epoch, gs, ds);
        result.final_val = val;
    }
    if (cfg.epochs == start_epoch) result.final_val = start_val;

    if (!losses_csv || !val_csv) throw TrainError("fit: CSV write failed in " + cfg.out_dir);
    result.model = std::move(model);
    result.epochs_run = cfg.epochs - start_epoch;
    result.best_epoch = best_epoch;
    result.best_val = best_val;
    result.best_checkpoint = (dir / "best.mfz").string();
    return result;
}

std::vector<AblationRow> run_ablation(const SlicePack& train_pack, const SlicePack& val_pack,
                                      const TrainConfig& base, const std::vector<MEMode>& grid) {
    if (grid.empty()) throw TrainError("run_ablation: empty mode grid");
    if (base.out_dir.empty()) throw TrainError("run_ablation: out_dir is required");
    namespace fs = std::filesystem;
    fs::create_directories(base.out_dir);

    std::vector<AblationRow> rows;
    for (const MEMode mode : grid) {
        TrainConfig cfg = base;
        cfg.mode = mode;
        if (mode == MEMode::learnable_high_rec) cfg.weights.alpha = 50.0;
        cfg.out_dir = (fs::path(base.out_dir) / me_mode_name(mode)).string();
        cfg.resume.clear();
        const FitResult fit_result = fit(train_pack, val_pack, cfg);
        const Model best = load_checkpoint(fit_result.best_checkpoint);
        const MetricsReport report = evaluate_pack(best.g, val_pack);
        AblationRow row;
        row.mode = mode;
        row.best_val = fit_result.best_val;
        row.l1x1000 = report.grand.l1_mean;
        row.psnr_db = report.grand.psnr_mean;
        row.ssim_v = report.grand.ssim_mean;
        row.ms_ssim_v = report.grand.ms_mean;
        rows.push_back(row);
    }

    std::ofstream csv(fs::path(base.out_dir) / "ablation.csv");
    if (!csv) throw TrainError("run_ablation: cannot write ablation.csv");
    csv << std::setprecision(17);
    csv << "mode,best_val_l1,l1x1000,psnr,ssim,msssim\n";
    for (const AblationRow& row : rows)
        csv << me_mode_name(row.mode) << ',' << row.best_val << ',' << row.l1x1000 << ','
            << row.psnr_db << ',' << row.ssim_v << ',' << row.ms_ssim_v << '\n';
    if (!csv) throw TrainError("run_ablation: ablation.csv write failed");
    return rows;
}

}  // namespace modfuser
