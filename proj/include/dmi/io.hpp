#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dmi/classifiers.hpp"
#include "dmi/core/tensor.hpp"

namespace dmi::io {

// ---- images ---------------------------------------------------------------

// Decodes a PNG into (C, H, W) floats in [0,1]. Grayscale stays C=1, color
// becomes C=3; alpha channels are dropped; 16-bit files are reduced to 8.
Tensorf read_png(const std::string& path);

// Writes an 8-bit PNG from a (C, H, W) image in [0,1] with C of 1 or 3.
// Output is deterministic: fixed compression settings, no timestamps.
void write_png(const std::string& path, const Tensorf& img);

// Tiles a (N, C, H, W) batch into one (C, gh, gw) image, `columns` per row,
// with a 2-pixel border of `pad_value` around every tile.
Tensorf image_grid(const Tensorf& batch, int columns, float pad_value = 1.0f);

// ---- checkpoints ------------------------------------------------------------

// Self-describing container: a JSON header (meta strings plus a tensor
// directory) followed by raw little-endian float32 blobs.
struct Checkpoint {
    std::map<std::string, std::string> meta;
    std::vector<std::pair<std::string, Tensorf>> tensors;

    const Tensorf* find(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return &t;
        return nullptr;
    }
};

void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

// Snapshot of live model state (names preserved, values copied).
Checkpoint checkpoint_from_state(const StateRefs& state, std::map<std::string, std::string> meta);
// Writes checkpoint tensors back into live state; names and shapes must
// match exactly, extra or missing tensors are an error.
void load_checkpoint_into_state(const Checkpoint& c, const StateRefs& state);

// ---- hashing / filesystem ----------------------------------------------------

// 64-bit FNV-1a over raw bytes, rendered as 16 hex digits; used for corpus
// and artifact content hashes in run manifests.
std::string content_hash(const void* data, size_t bytes);
std::string content_hash(const Tensorf& t);
std::string content_hash_file(const std::string& path);

bool file_exists(const std::string& path);
void ensure_dir(const std::string& path);  // mkdir -p
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace dmi::io
