// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>

#include "unlearn/model.hpp"

namespace unlearn {

// One JSON manifest line (format_version, config, step, tensor list) followed
// by the parameters as little-endian float32 blocks in manifest order.
void save_checkpoint(const ModelState& state, const std::filesystem::path& path);
ModelState load_checkpoint(const std::filesystem::path& path);

}  // namespace unlearn
