#pragma once

// Multi-receptive-field module, the U-Net built from it, the two-stage
// denoise-then-invert model, its loss, checkpoints and training drivers.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "gprinv/dataset.hpp"
#include "gprinv/grid.hpp"
#include "gprinv/nn.hpp"

namespace gprinv::dmrf {

// ---- receptive-field arithmetic -------------------------------------------

// r_0 = 1, r_i = r_{i-1} + (k_i - 1) * prod_{j<i} s_j. EmptySpec on empty
// lists; InvalidConfig on unequal lengths or zero entries.
std::size_t receptive_field(const std::vector<std::size_t>& kernels,
                            const std::vector<std::size_t>& strides);

struct ReplacementCount {
  std::size_t direct;  // one k x k conv, C -> C, no bias
  std::size_t replaced;  // cascaded 3x3 convs with the same receptive field
};
// k in {5, 7}; UnsupportedKernel otherwise.
ReplacementCount replacement_param_count(std::size_t kernel, std::size_t channels);

// Kernel sizes of the four branches, in branch order.
const std::vector<std::vector<std::size_t>>& mrf_branch_kernels();

// ---- configs -------------------------------------------------------------

struct MRFModuleConfig {
  std::size_t in_channels = 1;
  std::size_t width = 1;  // channels of every branch and of the output

  void validate() const;
};

enum class Activation { ReLU, ELU };
const char* to_string(Activation a) noexcept;

struct UNetConfig {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  double width_factor = 1.0;
  Activation final_activation = Activation::ReLU;
  bool use_mrf = true;  // false: each module is one 3x3 conv + ReLU
  bool use_skips = true;  // false: encoder-decoder without skip concat

  // Five stage widths max(1, round(64 * f * 2^s)).
  std::vector<std::size_t> widths() const;
  void validate() const;
  friend bool operator==(const UNetConfig&, const UNetConfig&) = default;
};

// Which network is trained: the two-stage model or a single-stage baseline
// mapping the noisy B-scan straight to the permittivity map.
enum class ModelKind { DMRF, SMRF, UNet, EncDec };
const char* to_string(ModelKind k) noexcept;
ModelKind model_kind_from_string(const std::string& s);

struct DMRFConfig {
  ModelKind kind = ModelKind::DMRF;
  UNetConfig stage1{1, 1, 1.0, Activation::ReLU, true, true};
  UNetConfig stage2{2, 1, 1.0, Activation::ELU, true, true};
  double alpha = 10.0;
  double beta = 1.0;
  bool two_channel_input = true;
  bool end_to_end = true;
  // Sets alpha = beta * l2 / l1 from the first epoch's training means.
  bool auto_balance = false;
  std::size_t epochs = 150;
  double lr = 1e-4;
  std::size_t batch = 16;
  std::uint64_t seed = 0;

  bool has_stage1() const noexcept { return kind == ModelKind::DMRF; }
  void validate() const;
  // "key = value" lines; parse() accepts exactly what text() writes.
  std::string text() const;
  static DMRFConfig parse(const std::string& text);
  std::string hash() const;

  // Stage settings for a model kind at a given width factor.
  static DMRFConfig for_kind(ModelKind kind, double width_factor);
  friend bool operator==(const DMRFConfig&, const DMRFConfig&) = default;
};

// ---- building blocks -------------------------------------------------------

template <typename T>
void declare_mrf(nn::ParamStore<T>& store, const std::string& prefix, const MRFModuleConfig& cfg);
// ShapeMismatch if x has the wrong channel count or a side below 4.
template <typename T>
nn::Var mrf_forward(nn::Graph<T>& g, nn::Var x, const std::string& prefix,
                    const MRFModuleConfig& cfg);

template <typename T>
void declare_unet(nn::ParamStore<T>& store, const std::string& prefix, const UNetConfig& cfg);
// ShapeMismatch unless H and W are multiples of 16 and channels match.
template <typename T>
nn::Var unet_forward(nn::Graph<T>& g, nn::Var x, const std::string& prefix, const UNetConfig& cfg);

// Parameters of the whole model: "u1." stage 1, "u2." stage 2.
template <typename T>
nn::ParamStore<T> build_params(const DMRFConfig& cfg, std::uint64_t init_seed);

template <typename T>
struct ForwardResult {
  std::optional<nn::Var> denoised;  // only for the two-stage model
  nn::Var perm;
};
template <typename T>
ForwardResult<T> forward_dmrf(nn::Graph<T>& g, nn::Var noisy, const DMRFConfig& cfg);

struct LossVars {
  nn::Var total, l1, l2;
};
// l1 = MSE(y1, y1_hat), l2 = MSE(y2, y2_hat), total = alpha l1 + beta l2.
template <typename T>
LossVars combined_loss(nn::Graph<T>& g, nn::Var y1, nn::Var y1_hat, nn::Var y2, nn::Var y2_hat,
                       double alpha, double beta);

// ---- checkpoints ----------------------------------------------------------
//
// "GPRC", u32 version 1, u64 FNV-1a of the metadata text, u32 metadata
// length, metadata text ("key = value" lines: model config, training state,
// normalization, image size), u32 record count, then per parameter in store
// order: u32 name length, name, 4 x u32 shape, float32 data (little endian).

struct Checkpoint {
  DMRFConfig config;
  nn::ParamStore<float> params;
  double best_test_loss = 0.0;
  std::size_t epoch = 0;
  std::uint64_t adam_step = 0;
  std::string rng_state;
  dataset::NormalizationSpec norm;
  std::size_t image_rows = 0;
  std::size_t image_cols = 0;
  std::string dataset_hash;
  std::uint64_t master_seed = 0;

  void save(const std::filesystem::path& path) const;
  // CorruptFile on any format violation.
  static Checkpoint load(const std::filesystem::path& path);
};

// ---- training -------------------------------------------------------------

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double train_l = 0, train_l1 = 0, train_l2 = 0;
  double test_l = 0, test_l1 = 0, test_l2 = 0;
  double lr = 0;
};

// "epoch,train_l,train_l1,train_l2,test_l,test_l1,test_l2".
std::string loss_csv_header();
std::string loss_csv_row(const EpochStats& e);

struct TrainOptions {
  std::optional<std::filesystem::path> loss_csv;
  std::function<void(const EpochStats&)> on_epoch;
  // Use only the first n training samples (0 = all).
  std::size_t max_train = 0;
};

struct TrainResult {
  Checkpoint best;  // lowest test loss
  Checkpoint last;
  std::vector<EpochStats> history;
};

// DataUnavailable if a split is empty; NonFiniteLoss with epoch/batch
// context if a loss or activation goes non-finite.
TrainResult train(const dataset::DatasetManifest& manifest, const std::filesystem::path& root,
                  const DMRFConfig& cfg, const TrainOptions& opts = {});

// Resumes from ckpt with lr0, multiplying lr by 0.99 after each epoch whose
// training loss does not drop. IncompatibleCheckpoint on image-shape or
// normalization mismatch. Zero epochs returns ckpt unchanged.
TrainResult fine_tune(const Checkpoint& ckpt, const dataset::DatasetManifest& manifest,
                      const std::filesystem::path& root, std::size_t epochs, double lr0,
                      const TrainOptions& opts = {});

// The fine-tuning rate rule alone: lr after each epoch given its loss.
double next_fine_tune_lr(double lr, double previous_loss, double loss);

// ---- inference ------------------------------------------------------------

struct Inference {
  std::optional<Image> denoised;  // [0, 1], two-stage model only
  Image perm;  // [0, 1]
  std::optional<Image> denoised_field;  // V/m
  Image perm_value;  // relative permittivity
};

// Network outputs are clamped to [0, 1] before denormalizing.
// IncompatibleCheckpoint on an input shape the checkpoint was not trained on.
std::vector<Inference> infer(const Checkpoint& ckpt, const std::vector<Image>& noisy,
                             std::size_t batch = 16);
Inference infer_file(const Checkpoint& ckpt, const std::filesystem::path& noisy_gprt);

}  // namespace gprinv::dmrf
