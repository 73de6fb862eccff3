// Copyright Contributors to the Wildsplat Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "wildsplat/tensor.hpp"

namespace wildsplat {

/// Flat binary container of named f32 blocks:
/// magic "WSPB", version byte, u32 block count, then per block
/// u16 name length + name bytes, u8 ndim, u32 dims..., f32 data (LE).
struct NamedBlock {
    std::string name;
    Tensor tensor;
};

std::vector<uint8_t> write_blocks(const std::vector<NamedBlock>& blocks);
std::vector<NamedBlock> read_blocks(const std::vector<uint8_t>& bytes);
void write_blocks_file(const std::vector<NamedBlock>& blocks, const std::string& path);
std::vector<NamedBlock> read_blocks_file(const std::string& path);

/// Serializes each parameter as four blocks: value, Adam moments (.m/.v)
/// and the step count (.t, one float).
std::vector<NamedBlock> params_to_blocks(const std::vector<Param*>& params);
/// Restores parameters in place, matched by name. Throws on a missing block
/// or a shape mismatch, naming the parameter.
void params_from_blocks(const std::vector<NamedBlock>& blocks,
                        const std::vector<Param*>& params);

/// id -> embedding rows. Binary layout: u32 count, u32 dim, then per row
/// i32 id + dim f32 values.
struct AppearanceLibrary {
    std::vector<int> ids;
    std::vector<Tensor> vectors;  // each [dim]

    const Tensor* find(int id) const;
    void put(int id, Tensor v);
};

void write_appearance_library(const AppearanceLibrary& lib, const std::string& path);
AppearanceLibrary read_appearance_library(const std::string& path);

// Small file helpers shared across modules.
std::vector<uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes);
void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

}  // namespace wildsplat
