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

#include <iosfwd>
#include <string>
#include <vector>

namespace bvd::cli {

/// Runs one command-line invocation. args is in the usual order and excludes
/// the program name. All output goes to the supplied streams; the return
/// value is the process exit code (0 on success, nonzero on any error,
/// including unknown flags, which print usage text to err).
///
/// Subcommands: gen-data, train, eval, decaption, bench.
/// The environment variable BVD_SEED, when set, overrides the seed of any
/// subcommand that consumes one.
int run_cli(std::vector<std::string> args, std::ostream& out, std::ostream& err);

}  // namespace bvd::cli
