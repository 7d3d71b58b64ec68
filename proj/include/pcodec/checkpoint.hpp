#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "pcodec/tensor.hpp"
#include "pcodec/trainer.hpp"

namespace pcodec::ckpt {

// Self-describing binary container: a JSON metadata block followed by named,
// checksummed little-endian float64 arrays.
struct Container {
  nlohmann::json meta;
  std::vector<std::pair<std::string, Tensor>> arrays;

  void add(std::string name, Tensor t) { arrays.emplace_back(std::move(name), std::move(t)); }
  bool has(const std::string& name) const;
  const Tensor& array(const std::string& name) const;  // IntegrityError when absent
};

void save(const std::string& path, const Container& c);
Container load(const std::string& path);

// Full trainer state: parameters, quantizer EMA statistics, optimizer state,
// memory bank, schedule position and the GAN gate.
void save_trainer(const std::string& path, trainer::Trainer& t, uint64_t config_hash);

// Rebuilds a trainer from cfg and overwrites every stored array. A nonzero
// expected_hash must match the stored config hash.
trainer::Trainer load_trainer(const std::string& path, const trainer::TrainerConfig& cfg,
                              uint64_t expected_hash = 0);

// Token-LM weights only (no optimizer state); hash semantics as above.
void save_token_lm(const std::string& path, const lm::Backbone& b, uint64_t config_hash);
lm::Backbone load_token_lm(const std::string& path, const lm::BackboneConfig& cfg,
                           uint64_t expected_hash = 0);

}  // namespace pcodec::ckpt
