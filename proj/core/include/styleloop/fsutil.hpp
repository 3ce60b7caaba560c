// Copyright 2026 The styleloop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace styleloop {

std::string read_text_file(const std::filesystem::path& path);

/// Writes to `<path>.tmp` in the same directory, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::string to_hex(uint64_t v);

}  // namespace styleloop
