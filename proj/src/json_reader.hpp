#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cascade/envs.hpp"
#include "cascade/stage_config.hpp"

namespace cascade::detail {

using stage::FieldError;

// Reads optional keys of one JSON object into typed fields, recording type errors and
// remembering which keys were consumed.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string prefix, std::vector<FieldError>& errors)
      : j_(j), prefix_(std::move(prefix)), errors_(errors) {
    if (!j_.is_object()) errors_.push_back({prefix_.empty() ? "<root>" : prefix_, "expected an object"});
  }

  std::string path(const std::string& key) const {
    return prefix_.empty() ? key : prefix_ + "." + key;
  }

  const nlohmann::json* find(const std::string& key) {
    seen_.insert(key);
    if (!j_.is_object()) return nullptr;
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void read(const std::string& key, std::string& out) {
    if (const auto* v = find(key)) {
      if (v->is_string()) out = v->get<std::string>();
      else fail(key, "expected a string");
    }
  }
  void read(const std::string& key, int& out) {
    if (const auto* v = find(key)) {
      if (v->is_number_integer()) out = v->get<int>();
      else fail(key, "expected an integer");
    }
  }
  void read(const std::string& key, std::uint64_t& out) {
    if (const auto* v = find(key)) {
      if (v->is_number_unsigned()) out = v->get<std::uint64_t>();
      else fail(key, "expected a non-negative integer");
    }
  }
  void read(const std::string& key, double& out) {
    if (const auto* v = find(key)) {
      if (v->is_number()) out = v->get<double>();
      else fail(key, "expected a number");
    }
  }
  void read(const std::string& key, bool& out) {
    if (const auto* v = find(key)) {
      if (v->is_boolean()) out = v->get<bool>();
      else fail(key, "expected a boolean");
    }
  }
  void read(const std::string& key, std::optional<double>& out) {
    if (const auto* v = find(key)) {
      if (v->is_null()) out.reset();
      else if (v->is_number()) out = v->get<double>();
      else fail(key, "expected a number or null");
    }
  }

  template <class Enum, class Parse>
  void read_enum(const std::string& key, Enum& out, Parse parse) {
    std::string text;
    if (!find(key)) return;
    read(key, text);
    if (text.empty()) return;
    try {
      out = parse(text);
    } catch (const std::exception& e) {
      fail(key, e.what());
    }
  }

  template <class Value, class Convert>
  void read_domain_map(const std::string& key, std::map<envs::Domain, Value>& out, Convert convert) {
    const auto* v = find(key);
    if (!v) return;
    if (!v->is_object()) return fail(key, "expected an object keyed by domain");
    out.clear();
    for (auto it = v->begin(); it != v->end(); ++it) {
      try {
        out[envs::parse_domain(it.key())] = convert(it.value());
      } catch (const std::exception& e) {
        errors_.push_back({path(key) + "." + it.key(), e.what()});
      }
    }
  }

  void fail(const std::string& key, const std::string& message) {
    errors_.push_back({path(key), message});
  }

  void reject_unknown() {
    if (!j_.is_object()) return;
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) errors_.push_back({path(it.key()), "unknown field"});
  }

 private:
  const nlohmann::json& j_;
  std::string prefix_;
  std::vector<FieldError>& errors_;
  std::set<std::string> seen_;
};

}  // namespace cascade::detail
