// Copyright 2026 The difflab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace difflab {

/// Structural validator for the JSON Schema subset the shipped schemas use:
/// type, properties, required, additionalProperties (bool), items, enum,
/// minimum/maximum, minItems, oneOf.  Returns human-readable violations;
/// empty means valid.
inline void validate_schema_impl(const nlohmann::json& doc,
                                 const nlohmann::json& schema,
                                 const std::string& path,
                                 std::vector<std::string>& errors) {
  using nlohmann::json;
  auto fail = [&](const std::string& msg) { errors.push_back(path + ": " + msg); };

  if (schema.contains("oneOf")) {
    int matches = 0;
    for (const auto& sub : schema.at("oneOf")) {
      std::vector<std::string> sub_errors;
      validate_schema_impl(doc, sub, path, sub_errors);
      if (sub_errors.empty()) ++matches;
    }
    if (matches != 1) {
      fail("expected exactly one oneOf branch to match, got " +
           std::to_string(matches));
    }
    return;
  }

  if (schema.contains("enum")) {
    bool found = false;
    for (const auto& v : schema.at("enum")) {
      if (v == doc) found = true;
    }
    if (!found) fail("value not in enum");
  }

  if (schema.contains("type")) {
    const std::string type = schema.at("type").get<std::string>();
    bool ok = false;
    if (type == "object") ok = doc.is_object();
    else if (type == "array") ok = doc.is_array();
    else if (type == "string") ok = doc.is_string();
    else if (type == "number") ok = doc.is_number();
    else if (type == "integer") ok = doc.is_number_integer();
    else if (type == "boolean") ok = doc.is_boolean();
    else if (type == "null") ok = doc.is_null();
    if (!ok) {
      fail("expected type " + type);
      return;
    }
  }

  if (doc.is_number() && schema.contains("minimum") &&
      doc.get<double>() < schema.at("minimum").get<double>()) {
    fail("below minimum");
  }
  if (doc.is_number() && schema.contains("maximum") &&
      doc.get<double>() > schema.at("maximum").get<double>()) {
    fail("above maximum");
  }

  if (doc.is_array()) {
    if (schema.contains("minItems") &&
        doc.size() < schema.at("minItems").get<std::size_t>()) {
      fail("fewer than minItems elements");
    }
    if (schema.contains("items")) {
      for (std::size_t i = 0; i < doc.size(); ++i) {
        validate_schema_impl(doc[i], schema.at("items"),
                             path + "[" + std::to_string(i) + "]", errors);
      }
    }
  }

  if (doc.is_object()) {
    if (schema.contains("required")) {
      for (const auto& key : schema.at("required")) {
        if (!doc.contains(key.get<std::string>())) {
          fail("missing required key '" + key.get<std::string>() + "'");
        }
      }
    }
    const json props = schema.value("properties", json::object());
    const bool allow_extra = schema.value("additionalProperties", true);
    for (const auto& [key, value] : doc.items()) {
      if (props.contains(key)) {
        validate_schema_impl(value, props.at(key), path + "." + key, errors);
      } else if (!allow_extra) {
        fail("unknown key '" + key + "'");
      }
    }
  }
}

inline std::vector<std::string> validate_against_schema(
    const nlohmann::json& doc, const nlohmann::json& schema) {
  std::vector<std::string> errors;
  validate_schema_impl(doc, schema, "$", errors);
  return errors;
}

}  // namespace difflab
