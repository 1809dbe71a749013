#pragma once

#include <map>
#include <set>

#include <fdnet/tensor.hpp>

namespace fdn {

// ---------------------------------------------------------------------------
// Run configuration files: flat key-value pairs under [section] headers.
//
//   # comment
//   [section]
//   key = value          # bool | integer | float | "string" | bare-string
//   list = [1, 2, 3]     # homogeneous scalars
//
// Unknown sections or keys are rejected against a per-command schema; every
// diagnostic carries the source line.
// ---------------------------------------------------------------------------

struct ConfigValue {
  enum class Type { Bool, Int, Float, String, IntList, FloatList, StringList };
  Type type = Type::String;
  bool b = false;
  std::int64_t i = 0;
  double f = 0;
  std::string s;
  std::vector<std::int64_t> ilist;
  std::vector<double> flist;
  std::vector<std::string> slist;
  int line = 0;
};

class Config {
 public:
  static Config parse(const std::string& text) {
    Config cfg;
    cfg.text_ = text;
    std::string section;
    int line_no = 0;
    std::istringstream in(text);
    std::string raw;
    while (std::getline(in, raw)) {
      ++line_no;
      std::string line = strip_comment(raw);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']')
          throw ConfigError("line " + std::to_string(line_no) +
                            ": unterminated section header");
        section = trim(line.substr(1, line.size() - 2));
        if (section.empty())
          throw ConfigError("line " + std::to_string(line_no) +
                            ": empty section name");
        cfg.sections_[section];  // allow empty sections
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError("line " + std::to_string(line_no) +
                          ": expected 'key = value'");
      const std::string key = trim(line.substr(0, eq));
      const std::string val = trim(line.substr(eq + 1));
      if (key.empty())
        throw ConfigError("line " + std::to_string(line_no) + ": empty key");
      if (section.empty())
        throw ConfigError("line " + std::to_string(line_no) + ": key '" + key +
                          "' outside any [section]");
      if (cfg.sections_[section].count(key))
        throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" +
                          section + "." + key + "'");
      ConfigValue v = parse_value(val, line_no);
      v.line = line_no;
      cfg.sections_[section][key] = std::move(v);
    }
    return cfg;
  }

  const std::string& text() const { return text_; }

  bool has(const std::string& sec, const std::string& key) const {
    auto s = sections_.find(sec);
    return s != sections_.end() && s->second.count(key) > 0;
  }

  // Rejects any present section/key not listed in the schema.
  void check_schema(
      const std::map<std::string, std::set<std::string>>& schema) const {
    for (const auto& [sec, keys] : sections_) {
      auto it = schema.find(sec);
      if (it == schema.end())
        throw ConfigError("unknown section [" + sec + "]");
      for (const auto& [key, val] : keys)
        if (!it->second.count(key))
          throw ConfigError("line " + std::to_string(val.line) +
                            ": unknown key '" + sec + "." + key + "'");
    }
  }

  std::int64_t get_int(const std::string& sec, const std::string& key,
                       std::int64_t def) const {
    const ConfigValue* v = find(sec, key);
    if (!v) return def;
    if (v->type != ConfigValue::Type::Int) bad_type(sec, key, *v, "integer");
    return v->i;
  }
  double get_double(const std::string& sec, const std::string& key,
                    double def) const {
    const ConfigValue* v = find(sec, key);
    if (!v) return def;
    if (v->type == ConfigValue::Type::Int) return static_cast<double>(v->i);
    if (v->type != ConfigValue::Type::Float) bad_type(sec, key, *v, "number");
    return v->f;
  }
  bool get_bool(const std::string& sec, const std::string& key, bool def) const {
    const ConfigValue* v = find(sec, key);
    if (!v) return def;
    if (v->type != ConfigValue::Type::Bool) bad_type(sec, key, *v, "bool");
    return v->b;
  }
  std::string get_string(const std::string& sec, const std::string& key,
                         const std::string& def) const {
    const ConfigValue* v = find(sec, key);
    if (!v) return def;
    if (v->type != ConfigValue::Type::String) bad_type(sec, key, *v, "string");
    return v->s;
  }
  std::string require_string(const std::string& sec, const std::string& key) const {
    const ConfigValue* v = find(sec, key);
    if (!v) missing(sec, key);
    if (v->type != ConfigValue::Type::String) bad_type(sec, key, *v, "string");
    return v->s;
  }
  std::vector<std::int64_t> get_int_list(const std::string& sec,
                                         const std::string& key,
                                         std::vector<std::int64_t> def) const {
    const ConfigValue* v = find(sec, key);
    if (!v) return def;
    if (v->type == ConfigValue::Type::Int) return {v->i};
    if (v->type != ConfigValue::Type::IntList)
      bad_type(sec, key, *v, "integer list");
    return v->ilist;
  }
  std::vector<double> get_double_list(const std::string& sec,
                                      const std::string& key,
                                      std::vector<double> def) const {
    const ConfigValue* v = find(sec, key);
    if (!v) return def;
    if (v->type == ConfigValue::Type::IntList) {
      std::vector<double> out;
      for (auto i : v->ilist) out.push_back(static_cast<double>(i));
      return out;
    }
    if (v->type == ConfigValue::Type::Int) return {static_cast<double>(v->i)};
    if (v->type == ConfigValue::Type::Float) return {v->f};
    if (v->type != ConfigValue::Type::FloatList)
      bad_type(sec, key, *v, "number list");
    return v->flist;
  }
  std::vector<std::string> get_string_list(const std::string& sec,
                                           const std::string& key,
                                           std::vector<std::string> def) const {
    const ConfigValue* v = find(sec, key);
    if (!v) return def;
    if (v->type == ConfigValue::Type::String) return {v->s};
    if (v->type != ConfigValue::Type::StringList)
      bad_type(sec, key, *v, "string list");
    return v->slist;
  }

 private:
  const ConfigValue* find(const std::string& sec, const std::string& key) const {
    auto s = sections_.find(sec);
    if (s == sections_.end()) return nullptr;
    auto k = s->second.find(key);
    return k == s->second.end() ? nullptr : &k->second;
  }
  [[noreturn]] static void missing(const std::string& sec,
                                   const std::string& key) {
    throw ConfigError("missing required key '" + sec + "." + key + "'");
  }
  [[noreturn]] static void bad_type(const std::string& sec,
                                    const std::string& key,
                                    const ConfigValue& v, const char* want) {
    throw ConfigError("line " + std::to_string(v.line) + ": key '" + sec + "." +
                      key + "' must be a " + want);
  }

  static std::string strip_comment(const std::string& line) {
    bool in_str = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') in_str = !in_str;
      if (line[i] == '#' && !in_str) return line.substr(0, i);
    }
    return line;
  }
  static std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    std::size_t b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? "" : s.substr(a, b - a + 1);
  }

  static ConfigValue parse_scalar(const std::string& tok, int line_no) {
    ConfigValue v;
    if (tok == "true" || tok == "false") {
      v.type = ConfigValue::Type::Bool;
      v.b = tok == "true";
      return v;
    }
    if (!tok.empty() && tok.front() == '"') {
      if (tok.size() < 2 || tok.back() != '"')
        throw ConfigError("line " + std::to_string(line_no) +
                          ": unterminated string");
      v.type = ConfigValue::Type::String;
      v.s = tok.substr(1, tok.size() - 2);
      return v;
    }
    // Number?
    char* end = nullptr;
    errno = 0;
    const long long as_int = std::strtoll(tok.c_str(), &end, 10);
    if (end && *end == '\0' && errno == 0 && !tok.empty()) {
      v.type = ConfigValue::Type::Int;
      v.i = as_int;
      return v;
    }
    errno = 0;
    const double as_float = std::strtod(tok.c_str(), &end);
    if (end && *end == '\0' && errno == 0 && !tok.empty()) {
      v.type = ConfigValue::Type::Float;
      v.f = as_float;
      return v;
    }
    // Bare string.
    v.type = ConfigValue::Type::String;
    v.s = tok;
    return v;
  }

  static ConfigValue parse_value(const std::string& val, int line_no) {
    if (val.empty())
      throw ConfigError("line " + std::to_string(line_no) + ": empty value");
    if (val.front() != '[') return parse_scalar(val, line_no);
    if (val.back() != ']')
      throw ConfigError("line " + std::to_string(line_no) +
                        ": unterminated list");
    ConfigValue out;
    std::string inner = val.substr(1, val.size() - 2);
    std::vector<ConfigValue> items;
    std::string cur;
    bool in_str = false;
    auto flush = [&] {
      std::string t = trim(cur);
      cur.clear();
      if (!t.empty()) items.push_back(parse_scalar(t, line_no));
    };
    for (char c : inner) {
      if (c == '"') in_str = !in_str;
      if (c == ',' && !in_str) {
        flush();
        continue;
      }
      cur.push_back(c);
    }
    flush();
    bool any_float = false, any_str = false, any_bool = false;
    for (const auto& it : items) {
      any_float |= it.type == ConfigValue::Type::Float;
      any_str |= it.type == ConfigValue::Type::String;
      any_bool |= it.type == ConfigValue::Type::Bool;
    }
    if (any_bool)
      throw ConfigError("line " + std::to_string(line_no) +
                        ": boolean lists are not supported");
    if (any_str) {
      for (const auto& it : items)
        if (it.type != ConfigValue::Type::String)
          throw ConfigError("line " + std::to_string(line_no) +
                            ": mixed list element types");
      out.type = ConfigValue::Type::StringList;
      for (const auto& it : items) out.slist.push_back(it.s);
    } else if (any_float) {
      out.type = ConfigValue::Type::FloatList;
      for (const auto& it : items)
        out.flist.push_back(it.type == ConfigValue::Type::Int
                                ? static_cast<double>(it.i)
                                : it.f);
    } else {
      out.type = ConfigValue::Type::IntList;
      for (const auto& it : items) out.ilist.push_back(it.i);
    }
    return out;
  }

  std::string text_;
  std::map<std::string, std::map<std::string, ConfigValue>> sections_;
};

}  // namespace fdn
