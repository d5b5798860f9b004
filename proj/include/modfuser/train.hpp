#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "modfuser/data.hpp"
#include "modfuser/losses.hpp"
#include "modfuser/model.hpp"

namespace modfuser {

// Configuration or I/O problems around training.
struct TrainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A loss went NaN; the message names the offending term.
struct TrainAbort : TrainError {
    using TrainError::TrainError;
};

struct TrainConfig {
    int epochs = 100;
    int batch = 24;
    double lr_g = 1e-4;
    double lr_d = 1e-5;
    LossWeights weights;
    MEMode mode = MEMode::consecutive;
    bool me_classic = false;
    int channels = 64;  // C
    int depth = 4;      // T transformer layers
    int heads = 4;
    std::uint64_t seed = 1;
    int checkpoint_every = 10;    // epochs between ckpt_{e}.mfz files; 0 = ends only
    double clip_norm = 0.0;       // 0 = no gradient clipping
    bool disen_detach = false;    // stop-gradient on the reference feature branch
    int max_steps_per_epoch = 0;  // 0 = full pass over the training pack
    int val_max_slices = 0;       // 0 = validate on every slice
    bool deterministic = true;    // log wall_ms as 0 so runs are byte-comparable
    std::string out_dir;          // checkpoints, losses.csv, val.csv, run_manifest.txt
    std::string resume;           // ckpt_{e}.mfz to continue from (state in ckpt_{e}.mfs)
};

void validate(const TrainConfig& cfg);

// The model geometry implied by a training config; the modality count comes
// from the data pack.
ModelConfig model_config(const TrainConfig& cfg, int modalities);

// Adam moments aligned with a NamedParams order. beta1/beta2/eps are the
// standard defaults; step counts the updates applied so far.
struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t step = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
};

AdamState make_adam_state(const NamedParams& params);

// One bias-corrected Adam update. Gradients are read from each parameter
// tensor (an empty gradient counts as zero); parameters are updated in
// place. Throws TrainError when state and parameter shapes disagree.
void adam_step(const NamedParams& params, AdamState& state, double lr);

// Scales all gradients by clip_norm/|g| when the global L2 norm exceeds
// clip_norm. Returns the pre-clip norm.
double clip_gradients(const NamedParams& params, double clip_norm);

// One training sample: a slice with its pack geometry, the source modality,
// and the target modality drawn uniformly from the other M-1.
struct BatchItem {
    const Slice* slice = nullptr;
    int height = 0;
    int width = 0;
    int m_x = 0;
    int m_y = 0;
};

// One optimization step: first the discriminator on real slices and
// detached fakes, then the generator through reconstruction,
// disentanglement, cycle, adversarial, and auxiliary terms. Losses are
// averaged over the batch; report.total_g is recombined from the averaged
// parts so logs can be checked exactly. Throws TrainAbort on a NaN loss.
LossReport train_step(Model& model, AdamState& g_state, AdamState& d_state,
                      const std::vector<BatchItem>& batch, const TrainConfig& cfg);

// Mean absolute error over every directed modality pair of the pack
// (raw [-1,1] scale); the validation criterion.
double validation_l1(const Translator& g, const SlicePack& pack, int max_slices = 0);

struct FitResult {
    Model model;
    int epochs_run = 0;
    int best_epoch = 0;
    double best_val = 0.0;
    double final_val = 0.0;
    std::string best_checkpoint;
    std::vector<double> val_history;  // index 0 = untrained model
};

// Full training loop. Writes into cfg.out_dir:
//   losses.csv        one row per step: step,rec,disen,cyc,adv_g,aux_g,
//                     total_g,adv_d,aux_d,wall_ms
//   val.csv           one row per epoch (epoch 0 = initial model)
//   ckpt_{e}.mfz/.mfs weights + optimizer state at the cadence, at epoch 0,
//                     and at the final epoch
//   best.mfz/.mfs     lowest validation L1 so far
//   run_manifest.txt  every config field as key=value
// cfg.resume continues a run bit-identically to one that never stopped.
FitResult fit(const SlicePack& train_pack, const SlicePack& val_pack, const TrainConfig& cfg);

struct AblationRow {
    MEMode mode = MEMode::consecutive;
    double best_val = 0.0;
    double l1x1000 = 0.0;
    double psnr_db = 0.0;
    double ssim_v = 0.0;
    double ms_ssim_v = 0.0;
};

// Trains one run per mode under an identical seed and budget (the
// learnable_high_rec mode raises the reconstruction weight to 50), then
// scores each best checkpoint on the validation pack. Writes
// <out_dir>/ablation.csv and per-mode run directories.
std::vector<AblationRow> run_ablation(const SlicePack& train_pack, const SlicePack& val_pack,
                                      const TrainConfig& base, const std::vector<MEMode>& grid);

}  // namespace modfuser
