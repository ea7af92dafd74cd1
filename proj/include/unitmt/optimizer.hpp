#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "unitmt/model.hpp"

namespace unitmt {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double clip_norm = 0.0;  // global gradient norm clip; 0 disables

  void validate() const;
};

// One flag per tensor, in Seq2SeqParams::for_each order.
using TrainableMask = std::vector<bool>;

TrainableMask all_trainable(const ModelConfig& config);

// Only the last `layers` encoder and decoder layers plus the final layer
// norms stay trainable. layers == 0 leaves nothing to train and is rejected.
TrainableMask last_layers_trainable(const ModelConfig& config, int layers);

class Adam {
 public:
  Adam() = default;
  Adam(const ModelConfig& config, AdamConfig opts);

  // Returns the pre-clip global gradient norm over trainable tensors.
  double step(Seq2SeqParams& params, const Seq2SeqParams& grads, double lr, const TrainableMask& mask);

  const AdamConfig& options() const { return opts_; }
  long steps() const { return steps_; }
  const Seq2SeqParams& first_moment() const { return m_; }
  const Seq2SeqParams& second_moment() const { return v_; }
  std::uint64_t hash() const;

  // Restores saved state; shapes must match the config given at construction.
  void restore(long steps, Seq2SeqParams m, Seq2SeqParams v);

 private:
  AdamConfig opts_;
  long steps_ = 0;
  Seq2SeqParams m_, v_;
};

struct Checkpoint {
  Seq2SeqParams params;
  std::string stage = "init";
  long step = 0;
  std::optional<Adam> optimizer;
};

// Text format: header, config record, then every tensor as
// "tensor <name> <rows> <cols>" followed by one line of values per row.
void write_checkpoint(std::ostream& os, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& is);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace unitmt
