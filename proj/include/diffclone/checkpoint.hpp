#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "diffclone/encoder.hpp"
#include "diffclone/policies.hpp"

namespace diffclone {

// FNV-1a 64-bit digest; the integrity check used by checkpoints and run
// manifests.
std::uint64_t fnv1a64(std::span<const unsigned char> bytes);
std::uint64_t fnv1a64_file(const std::string& path);

// Versioned binary checkpoint container:
//   "DCK1\n"
//   key=value lines, blank-line terminated   (checksummed)
//   little-endian float64 parameter payload  (checksummed)
//   8-byte little-endian FNV-1a checksum of the two sections above
//
// Array boundaries are not stored: readers rebuild the module from the
// config block and split the payload by the declared parameter sizes.
struct Checkpoint {
    std::vector<std::pair<std::string, std::string>> config;
    std::vector<double> values;

    // FormatError when the key is absent.
    const std::string& config_value(const std::string& key) const;
    std::optional<std::string> find(const std::string& key) const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
// FormatError on bad magic/layout; CorruptionError on checksum mismatch.
Checkpoint load_checkpoint(const std::string& path);

// --- typed policy checkpoints ----------------------------------------------------
// Each embeds the encoder (when one is attached) so evaluation needs only
// the checkpoint plus the normalization sidecar. `kind` dispatches loading.

std::string checkpoint_kind(const std::string& path);  // peeks at the kind key

void save_diffclone_checkpoint(const DiffClonePolicy& policy, const EncoderNet* encoder,
                               const std::string& path);
// stats are NOT stored here; callers attach the sidecar afterward.
DiffClonePolicy load_diffclone_checkpoint(const std::string& path);

void save_bc_checkpoint(const BcPolicy& policy, const EncoderNet* encoder,
                        const std::string& path);
BcPolicy load_bc_checkpoint(const std::string& path);

void save_vinn_checkpoint(const VinnPolicy& policy, const EncoderNet* encoder,
                          const std::string& path);
VinnPolicy load_vinn_checkpoint(const std::string& path);

void save_encoder_checkpoint(const EncoderNet& encoder, const std::string& path);
EncoderNet load_encoder_checkpoint(const std::string& path);

}  // namespace diffclone
