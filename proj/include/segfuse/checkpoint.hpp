#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "segfuse/fusion.hpp"
#include "segfuse/modality.hpp"
#include "segfuse/network.hpp"

// "CKPT" files: magic, u8 version, u32 parameter count, then per parameter
// u32 name length, name, u32 ndim, u32 dims, f32 values (all little-endian),
// followed by a u32-length-prefixed config record from which the topology is
// rebuilt.
//
// Stream config record (u32 each): in_channels, num_classes, stage count,
// widths..., convs_per_stage, tap_stage, modality, training window.
// Fusion config record: stream A record, stream B record, u32 hidden width,
// then one mode byte (1 average, 2 correction).

namespace segfuse::ckpt {

inline constexpr std::uint8_t kVersion = 1;

struct StreamInfo {
    data::Modality modality = data::Modality::irrg;
    std::uint32_t window = 64;

    bool operator==(const StreamInfo&) const = default;
};

struct StreamCheckpoint {
    nn::Network<float> net;
    StreamInfo info;
};

struct FusionCheckpoint {
    fusion::FusionModel<float> model;
    StreamInfo a;
    StreamInfo b;
};

enum class Kind { stream, fusion };

std::vector<std::uint8_t> encode_stream(const nn::Network<float>& net, const StreamInfo& info);
std::vector<std::uint8_t> encode_fusion(const fusion::FusionModel<float>& model, const StreamInfo& a,
                                        const StreamInfo& b);

// Decoders throw BadMagicError, VersionError or TruncatedError for the
// corresponding damage and FormatError when the parameters do not fit the
// recorded topology. Nothing is returned unless the whole file parses.
StreamCheckpoint decode_stream(std::span<const std::uint8_t> bytes);
FusionCheckpoint decode_fusion(std::span<const std::uint8_t> bytes);
Kind detect_kind(std::span<const std::uint8_t> bytes);

void save_stream(const nn::Network<float>& net, const StreamInfo& info, const std::filesystem::path& path);
StreamCheckpoint load_stream(const std::filesystem::path& path);
void save_fusion(const fusion::FusionModel<float>& model, const StreamInfo& a, const StreamInfo& b,
                 const std::filesystem::path& path);
FusionCheckpoint load_fusion(const std::filesystem::path& path);
Kind detect_kind(const std::filesystem::path& path);

}  // namespace segfuse::ckpt
