// Copyright (c) 2026, The mole-advice Authors
// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoint container shared by base models, single experts and
// gated mixtures:
//
//   bytes 0..3    magic "MOLE"
//   bytes 4..7    format version, u32 little-endian (= 1)
//   bytes 8..15   header length H, u64 little-endian
//   H bytes       UTF-8 JSON: {"tensors": [{name, shape, dtype:"f64", byte_offset}], "meta": {...}}
//   payload       little-endian f64, row-major, in header order
//
// byte_offset is relative to the first payload byte.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mole/lora.hpp"
#include "mole/transformer.hpp"

namespace mole::checkpoint {

inline constexpr std::uint32_t kFormatVersion = 1;

enum class Kind { base, lora_expert, mole };

std::string to_string(Kind kind);
Kind kind_from_string(const std::string& s);

struct Container {
    nlohmann::json meta = nlohmann::json::object();
    std::vector<NamedTensor> tensors;
};

std::vector<std::uint8_t> encode(const Container& c);
/// Throws FormatError on bad magic/version/truncation.
Container decode(std::span<const std::uint8_t> bytes);
/// Header JSON without decoding payloads.
nlohmann::json read_header(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

nlohmann::json config_to_json(const ModelConfig& c);
ModelConfig config_from_json(const nlohmann::json& j);

std::vector<std::uint8_t> serialize(const BaseModel& model);
std::vector<std::uint8_t> serialize(const LoraExpert& expert, const ModelConfig& config);
std::vector<std::uint8_t> serialize(const MoleModel& model);

Kind kind_of(std::span<const std::uint8_t> bytes);
BaseModel deserialize_base(std::span<const std::uint8_t> bytes);
struct LoadedExpert {
    LoraExpert expert;
    ModelConfig config;
};
LoadedExpert deserialize_expert(std::span<const std::uint8_t> bytes);
MoleModel deserialize_mole(std::span<const std::uint8_t> bytes);

void save(const std::filesystem::path& path, const BaseModel& model);
void save(const std::filesystem::path& path, const LoraExpert& expert, const ModelConfig& config);
void save(const std::filesystem::path& path, const MoleModel& model);
BaseModel load_base(const std::filesystem::path& path);
LoadedExpert load_expert(const std::filesystem::path& path);
MoleModel load_mole(const std::filesystem::path& path);

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_file(const std::filesystem::path& path);
/// Digest of the serialized parameter payload of a base model (names, shapes
/// and values); independent of the frozen flag.
std::string parameter_digest(const BaseModel& model);

}  // namespace mole::checkpoint
