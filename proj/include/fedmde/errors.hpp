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

#pragma once

#include <stdexcept>
#include <string>

namespace fedmde {

// Invalid arguments are reported with std::invalid_argument. The types below
// cover the failure kinds that callers are expected to catch and act on.

/// No pixel survived projection; the sample contributes nothing to the loss.
class EmptyValidityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A loss term evaluated to NaN or infinity. `term()` names the culprit.
class NonFiniteLossError : public std::runtime_error {
 public:
  NonFiniteLossError(std::string term, const std::string& what)
      : std::runtime_error(what), term_(std::move(term)) {}
  const std::string& term() const { return term_; }

 private:
  std::string term_;
};

/// Parameter sets that cannot be averaged together.
class AggregationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IngestionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad experiment configuration, detected before any compute starts.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fedmde
