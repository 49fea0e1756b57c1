#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "nlicheck/data.hpp"
#include "nlicheck/model.hpp"

namespace nli {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with bias correction. Non-trainable parameters are never touched;
// the padding embedding row keeps zero moments (its gradient is always
// masked) so it never moves either.
class Adam {
  public:
    Adam(std::vector<std::pair<std::string, Parameter<float>*>>& params,
         AdamConfig cfg);
    void step(std::vector<std::pair<std::string, Parameter<float>*>>& params);
    std::size_t steps_taken() const { return t_; }

  private:
    AdamConfig cfg_;
    std::size_t t_ = 0;
    std::vector<Tensor<float>> m_, v_;
};

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 512;
    AdamConfig adam;
    std::uint64_t seed = 42;
    std::size_t max_len = 42;
    bool verbose = false;

    void validate() const;
};

struct EpochMetrics {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
    double seconds = 0.0;
};

using TrainHistory = std::vector<EpochMetrics>;

std::string history_to_jsonl(const TrainHistory& h);

struct EvalResult {
    double accuracy = 0.0;
    double mean_loss = 0.0;
    std::array<std::array<std::size_t, 3>, 3> confusion{};  // [gold][pred]
    std::size_t count = 0;
};

EvalResult evaluate(Model<float>& model, const std::vector<NliExample>& dataset,
                    const Vocabulary& vocab, std::size_t batch_size = 256);

struct TrainResult {
    TrainHistory history;
    std::size_t best_epoch = 0;
    double best_val_accuracy = 0.0;
    std::vector<Tensor<float>> best_parameters;  // aligned with model.parameters()
};

// Mini-batch training. Fixed seed => bitwise-reproducible history and final
// weights (single-threaded). Restores the best-validation-accuracy weights
// into the model before returning.
TrainResult train(Model<float>& model, const std::vector<NliExample>& train_set,
                  const std::vector<NliExample>& val_set, const Vocabulary& vocab,
                  const TrainConfig& config);

// Checkpoint file: magic "PLNS1", u32 little-endian header length, UTF-8
// JSON header, then per parameter (in header order): u32 name length, name,
// u32 rank, u32 dims, raw little-endian float32 data.
void save_checkpoint(Model<float>& model, std::uint64_t vocab_hash,
                     const std::string& path);

struct LoadedCheckpoint {
    Model<float> model;
    std::uint64_t vocab_hash = 0;
    std::string model_id;  // content hash of the file
};

LoadedCheckpoint load_checkpoint(const std::string& path);
LoadedCheckpoint load_checkpoint(const std::string& path,
                                 std::uint64_t expected_vocab_hash);

}  // namespace nli
