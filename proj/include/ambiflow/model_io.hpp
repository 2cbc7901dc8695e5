#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "ambiflow/binio.hpp"
#include "ambiflow/flow.hpp"
#include "ambiflow/posedisc.hpp"
#include "ambiflow/skeleton.hpp"

namespace ambiflow::model_io {

inline constexpr std::uint32_t kModelVersion = 1;

/// Flow plus (optionally) its pose discriminator.
struct Model {
  flow::FlowModel flow;
  std::optional<posedisc::Discriminator> disc;
};

/// "AFMD", u32 version, flow header (J, blocks, alpha, seed, layer sizes),
/// discriminator header, permutations as u32, then every weight tensor in
/// parameter order as (u32 rows, u32 cols, f64 values). Little-endian.
void encode_model(binio::Writer& w, const flow::FlowModel& flow, const posedisc::Discriminator* disc);
Model decode_model(binio::Reader& r, const Skeleton& skeleton);

/// Model file: encoded model followed by a CRC32 of the preceding bytes.
void write_model(const std::filesystem::path& path, const flow::FlowModel& flow,
                 const posedisc::Discriminator* disc = nullptr);
Model read_model(const std::filesystem::path& path, const Skeleton& skeleton);

void encode_tensor(binio::Writer& w, const nd::Tensor& t);
nd::Tensor decode_tensor(binio::Reader& r);

/// Checks the trailing CRC32 and returns the payload before it.
std::span<const std::uint8_t> verified_payload(std::span<const std::uint8_t> bytes, const char* what);

}  // namespace ambiflow::model_io
