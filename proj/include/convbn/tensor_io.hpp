// Copyright 2026 The convbn Authors
// SPDX-License-Identifier: Apache-2.0
//
// CBNT container, little-endian:
//   "CBNT" | version u32 = 1 | count u32
//   per tensor: name_len u32 | name bytes | dtype u8 (0=f32, 1=f64)
//               | rank u32 | extents u32 x rank | row-major payload

#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "convbn/tensor.hpp"

namespace convbn {

using TensorMap = std::map<std::string, Tensor>;

std::vector<std::byte> encode_tensors(const TensorMap& tensors);
TensorMap decode_tensors(std::span<const std::byte> bytes);

void write_tensors(const TensorMap& tensors, const std::filesystem::path& path);
TensorMap read_tensors(const std::filesystem::path& path);

}  // namespace convbn
