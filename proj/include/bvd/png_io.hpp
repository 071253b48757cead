// Copyright (c) 2026 The bvd authors. All rights reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <string>

#include "bvd/tensor.hpp"

namespace bvd::pngio {

/// round(clamp(v, 0, 1) * 255).
uint8_t quantize8(double v);

/// Writes [H, W, 3] values in [0, 1] as an 8-bit RGB PNG. Output bytes are
/// deterministic: fixed compression level, no ancillary chunks.
void write_rgb8(const std::string& path, const Tensor& image);

/// Writes [H, W] values in [0, 1] as an 8-bit grayscale PNG.
void write_gray8(const std::string& path, const Tensor& image);

/// Reads an 8-bit PNG into [H, W, C] with C of 1 or 3, values b/255.
/// Palette images expand to RGB; 16-bit narrows to 8; alpha is stripped.
Tensor read_image(const std::string& path);

}  // namespace bvd::pngio
