/*
 * Copyright 2026 The Calciomics Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "calciomics/common.hpp"

namespace calciomics {

/// Minimal RFC 4180 CSV support: comma separator, double-quote escaping,
/// "\n" line endings on output, "\r\n" tolerated on input.
class CsvWriter {
 public:
  explicit CsvWriter(const std::string& path) : out_(path, std::ios::binary) {
    require(out_.good(), "cannot open for writing: " + path);
  }

  void write_row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ',';
      out_ << quote(cells[i]);
    }
    out_ << '\n';
    require(out_.good(), "write failure on CSV output");
  }

  /// Writes a "# ..." line; the reader skips such lines between records.
  void write_comment(const std::string& text) {
    require(text.find('\n') == std::string::npos &&
                text.find('\r') == std::string::npos,
            "CSV comment must be a single line");
    out_ << "# " << text << '\n';
    require(out_.good(), "write failure on CSV output");
  }

  static std::string quote(const std::string& cell) {
    if (cell.find_first_of(",\"\r\n") == std::string::npos) return cell;
    std::string q = "\"";
    for (char c : cell) {
      if (c == '"') q += '"';
      q += c;
    }
    q += '"';
    return q;
  }

 private:
  std::ofstream out_;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Index of the named column; throws if absent.
  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    fail("CSV column not found: " + name);
  }
};

/// Parses a CSV document. Lines starting with '#' at a record boundary are
/// comments and skipped. The first record becomes the header; every
/// subsequent record must have the same cell count.
inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open for reading: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();

  CsvTable table;
  std::vector<std::string> record;
  std::string cell;
  bool in_quotes = false;
  bool cell_started = false;

  auto end_cell = [&] {
    record.push_back(cell);
    cell.clear();
    cell_started = false;
  };
  auto end_record = [&] {
    end_cell();
    if (table.header.empty()) {
      table.header = record;
    } else {
      require(record.size() == table.header.size(),
              "CSV row with inconsistent cell count in " + path);
      table.rows.push_back(record);
    }
    record.clear();
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (!in_quotes && !cell_started && cell.empty() && record.empty() &&
        c == '#') {
      while (i < text.size() && text[i] != '\n') ++i;
      continue;
    }
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          cell += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        cell += c;
      }
      continue;
    }
    switch (c) {
      case '"':
        require(!cell_started || cell.empty(),
                "stray quote inside unquoted CSV cell in " + path);
        in_quotes = true;
        cell_started = true;
        break;
      case ',':
        end_cell();
        break;
      case '\r':
        break;
      case '\n':
        end_record();
        break;
      default:
        cell += c;
        cell_started = true;
        break;
    }
  }
  require(!in_quotes, "unterminated quoted CSV cell in " + path);
  if (cell_started || !cell.empty() || !record.empty()) end_record();
  return table;
}

inline double parse_double(const std::string& s) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    fail("cannot parse number: \"" + s + "\"");
  }
  require(pos == s.size(), "trailing characters in number: \"" + s + "\"");
  return v;
}

inline long parse_long(const std::string& s) {
  std::size_t pos = 0;
  long v = 0;
  try {
    v = std::stol(s, &pos);
  } catch (const std::exception&) {
    fail("cannot parse integer: \"" + s + "\"");
  }
  require(pos == s.size(), "trailing characters in integer: \"" + s + "\"");
  return v;
}

}  // namespace calciomics
