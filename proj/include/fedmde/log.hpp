/*
 * Copyright 2026 The fedmde Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Thin logging facade. spdlog lives behind it in a translation unit that
// never sees the fmt copy bundled with LibTorch.

#pragma once

#include <string>
#include <string_view>

namespace fedmde::log {

void debug(const std::string& message);
void info(const std::string& message);
void warn(const std::string& message);

/// "debug", "info", "warn", "error" or "off".
void set_level(std::string_view level);

}  // namespace fedmde::log
