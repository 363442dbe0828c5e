#pragma once

// Versioned file formats. JSON outputs carry a "schema" key; CSV outputs open
// with a "# schema: <id>" line followed by a header row. Numbers are written
// with 17 significant digits so that digests pin the exact bits.

#include <openssl/evp.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rtl/error.hpp"

namespace rtl::io {

using json = nlohmann::json;

inline constexpr const char* library_version = "0.3.0";

inline std::string format_number(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

namespace detail {

inline void dump(const json& j, std::string& out, int indent) {
  const std::string pad(2 * indent, ' ');
  switch (j.type()) {
    case json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += "{\n";
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) out += ",\n";
        first = false;
        out += pad + "  " + json(it.key()).dump() + ": ";
        dump(it.value(), out, indent + 1);
      }
      out += "\n" + pad + "}";
      return;
    }
    case json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      bool scalars = true;
      for (const auto& v : j) scalars = scalars && !v.is_structured();
      if (scalars) {
        out += "[";
        for (std::size_t i = 0; i < j.size(); ++i) {
          if (i) out += ", ";
          dump(j[i], out, indent);
        }
        out += "]";
        return;
      }
      out += "[\n";
      for (std::size_t i = 0; i < j.size(); ++i) {
        if (i) out += ",\n";
        out += pad + "  ";
        dump(j[i], out, indent + 1);
      }
      out += "\n" + pad + "]";
      return;
    }
    case json::value_t::number_float: {
      const double x = j.get<double>();
      out += std::isfinite(x) ? format_number(x) : "null";
      return;
    }
    default:
      out += j.dump();
  }
}

}  // namespace detail

/// JSON text with sorted keys, two-space indent and %.17g floats.
inline std::string to_text(const json& j) {
  std::string out;
  detail::dump(j, out, 0);
  out += "\n";
  return out;
}

inline std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr);
  static const char* hex = "0123456789abcdef";
  std::string s;
  for (unsigned int i = 0; i < len; ++i) {
    s += hex[md[i] >> 4];
    s += hex[md[i] & 15];
  }
  return s;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::config, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes bytes and returns their digest.
inline std::string write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::config, "cannot write " + path.string());
  out << bytes;
  return sha256_hex(bytes);
}

inline json load_json(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::config, path.string() + ": " + e.what());
  }
}

// CSV ---------------------------------------------------------------------------

struct Table {
  std::string schema;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void add(std::vector<std::string> row) {
    require(row.size() == header.size(), ErrorCode::invalid_argument, "row width does not match header");
    rows.push_back(std::move(row));
  }
  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw Error(ErrorCode::invalid_argument, "no column " + name);
  }
  double number(std::size_t row, const std::string& name) const { return std::stod(rows[row][column(name)]); }
};

inline std::string to_text(const Table& t) {
  std::string out = "# schema: " + t.schema + "\n";
  const auto line = [&out](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += ',';
      out += cells[i];
    }
    out += '\n';
  };
  line(t.header);
  for (const auto& r : t.rows) line(r);
  return out;
}

inline Table parse_table(const std::string& text) {
  Table t;
  std::istringstream in(text);
  std::string line;
  const auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(s);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    return cells;
  };
  require(std::getline(in, line) && line.rfind("# schema: ", 0) == 0, ErrorCode::config, "missing schema line");
  t.schema = line.substr(10);
  require(static_cast<bool>(std::getline(in, line)), ErrorCode::config, "missing header row");
  t.header = split(line);
  while (std::getline(in, line))
    if (!line.empty()) t.add(split(line));
  return t;
}

inline Table load_table(const std::filesystem::path& path) { return parse_table(read_file(path)); }

// Plot data ------------------------------------------------------------------------

enum class PlotKind { phase_portrait, psi_graph, density_vs_ell };

inline Table plot_table(const std::vector<std::vector<double>>& records, PlotKind kind) {
  require(!records.empty(), ErrorCode::invalid_argument, "no records to tabulate");
  Table t;
  switch (kind) {
    case PlotKind::phase_portrait: t.schema = "plot-phase/1"; t.header = {"q", "p"}; break;
    case PlotKind::psi_graph: t.schema = "plot-psi/1"; t.header = {"q", "psi"}; break;
    case PlotKind::density_vs_ell: t.schema = "plot-density/1"; t.header = {"ell", "count", "density"}; break;
  }
  for (const auto& r : records) {
    std::vector<std::string> cells;
    for (double x : r) cells.push_back(format_number(x));
    t.add(std::move(cells));
  }
  return t;
}

inline std::string emit_plot_data(const std::vector<std::vector<double>>& records, PlotKind kind,
                                  const std::filesystem::path& path) {
  return write_file(path, to_text(plot_table(records, kind)));
}

// Config validation -------------------------------------------------------------------

/// Fills every default into `user`, rejecting keys the template does not
/// know and values of the wrong kind. A null template entry accepts anything.
inline json materialize(const json& user, const json& tmpl, const std::string& path = "") {
  if (tmpl.is_null()) return user;
  if (tmpl.is_object()) {
    require(user.is_object(), ErrorCode::config, (path.empty() ? "/" : path) + ": expected an object");
    json out = tmpl;
    for (auto it = user.begin(); it != user.end(); ++it) {
      const std::string p = path + "/" + it.key();
      require(tmpl.contains(it.key()), ErrorCode::config, p + ": unknown key");
      out[it.key()] = materialize(it.value(), tmpl[it.key()], p);
    }
    return out;
  }
  const bool ok = (tmpl.is_number() && user.is_number()) || (tmpl.is_string() && user.is_string()) ||
                  (tmpl.is_boolean() && user.is_boolean()) || (tmpl.is_array() && user.is_array());
  require(ok, ErrorCode::config, path + ": expected " + std::string(tmpl.type_name()));
  if (tmpl.is_number_unsigned() || tmpl.is_number_integer())
    require(user.is_number_integer() || user.is_number_unsigned(), ErrorCode::config, path + ": expected an integer");
  return user;
}

}  // namespace rtl::io
