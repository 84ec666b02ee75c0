#ifndef SRMT_CHECKPOINT_HPP
#define SRMT_CHECKPOINT_HPP

#include <filesystem>
#include <map>
#include <string>

#include "srmt/training.hpp"

namespace srmt {

using Metadata = std::map<std::string, std::string>;

/// Flat key/value view of a model config; doubles are written with round-trip precision.
Metadata model_config_to_map(const ModelConfig& config);
ModelConfig model_config_from_map(const Metadata& values);

/*
 * Binary checkpoint, version 1, little-endian:
 *   "SRMTCKPT" u32 version u32 scalar-bytes
 *   model config (string pairs), metadata (string pairs)
 *   i64 step, epoch, cursor, adam updates; f64 flops and running averages
 *   tensors: parameters by canonical name, then "adam.m.<name>", "adam.v.<name>"
 * Tensor payloads are the raw scalar bytes, so a save/load cycle is bit-exact.
 */
/// Scalar width (4 or 8) a checkpoint was written with.
unsigned checkpoint_scalar_bytes(const std::filesystem::path& path);

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const TrainState<Scalar>& state, const Metadata& metadata = {});

template <typename Scalar>
TrainState<Scalar> load_checkpoint(const std::filesystem::path& path, Metadata* metadata = nullptr);

}  // namespace srmt

#endif
