#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "coxstream/errors.hpp"
#include "coxstream/survival.hpp"

namespace coxstream {

/// One unit coming off the ingestion stream: either a validated block or an
/// error record describing why the block was rejected. The stream keeps going
/// either way.
struct BlockItem {
  long index = 0;     // arrival order, 1-based
  std::string label;  // block id or file name, for diagnostics
  std::optional<DataBlock> block;
  std::string error;  // set when block is absent
};

class BlockReader {
 public:
  virtual ~BlockReader() = default;
  virtual std::optional<BlockItem> next() = 0;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

inline bool parse_double(const std::string& s, double& out) {
  const char* begin = s.data();
  const char* end = begin + s.size();
  const auto res = std::from_chars(begin, end, out);
  return res.ec == std::errc() && res.ptr == end && !s.empty();
}

/// Column layout of a block CSV: `time,status[,block],x...` in any column
/// order, matched by header name.
struct CsvLayout {
  int time_col = -1;
  int status_col = -1;
  int block_col = -1;
  std::vector<int> covariate_cols;
  int n_cols = 0;

  static CsvLayout from_header(const std::string& header_line) {
    const auto names = split_csv(header_line);
    CsvLayout lay;
    lay.n_cols = static_cast<int>(names.size());
    for (int i = 0; i < lay.n_cols; ++i) {
      if (names[i] == "time") {
        lay.time_col = i;
      } else if (names[i] == "status") {
        lay.status_col = i;
      } else if (names[i] == "block") {
        lay.block_col = i;
      } else {
        lay.covariate_cols.push_back(i);
      }
    }
    if (lay.time_col < 0 || lay.status_col < 0 || lay.covariate_cols.empty())
      throw invalid_input_error(
          "malformed header: need time, status, and at least one covariate column");
    return lay;
  }
};

struct ParsedRow {
  SubjectRecord record;
  std::string block_value;  // raw text of the block column, if any
};

/// Parse and validate one data row; throws invalid_input_error with a
/// line-numbered message.
inline ParsedRow parse_row(const CsvLayout& lay, const std::string& line,
                           long line_no) {
  const auto fields = split_csv(line);
  const auto fail = [&](const std::string& msg) {
    throw invalid_input_error(msg + ", line " + std::to_string(line_no));
  };
  if (static_cast<int>(fields.size()) != lay.n_cols)
    fail("expected " + std::to_string(lay.n_cols) + " fields, got " +
         std::to_string(fields.size()));
  ParsedRow row;
  if (!parse_double(fields[lay.time_col], row.record.time) ||
      !std::isfinite(row.record.time))
    fail("time must be a finite number");
  if (row.record.time <= 0.0) fail("time must be positive");
  double st;
  if (!parse_double(fields[lay.status_col], st) || (st != 0.0 && st != 1.0))
    fail("status must be 0 or 1");
  row.record.status = static_cast<int>(st);
  row.record.covariates.reserve(lay.covariate_cols.size());
  for (int c : lay.covariate_cols) {
    double v;
    if (!parse_double(fields[c], v) || !std::isfinite(v))
      fail("covariate must be a finite number");
    row.record.covariates.push_back(v);
  }
  if (lay.block_col >= 0) row.block_value = fields[lay.block_col];
  return row;
}

inline bool blank(const std::string& line) { return trim(line).empty(); }

/// Reads a single CSV stream, grouping consecutive rows that share a block
/// value (the whole stream is one block when there is no block column).
/// A bad row invalidates its block; remaining rows of that block are skipped.
class CsvStreamReader final : public BlockReader {
 public:
  CsvStreamReader(std::unique_ptr<std::istream> owned, std::istream& in,
                  std::string label, long first_index)
      : owned_(std::move(owned)), in_(in), label_(std::move(label)),
        index_(first_index) {
    std::string header;
    if (!std::getline(in_, header)) {
      header_error_ = "malformed header: empty input";
      return;
    }
    try {
      layout_ = CsvLayout::from_header(header);
    } catch (const std::exception& e) {
      header_error_ = e.what();
    }
    line_no_ = 1;
  }

  std::optional<BlockItem> next() override {
    if (!header_error_.empty()) {
      if (header_emitted_) return std::nullopt;
      header_emitted_ = true;
      return BlockItem{index_, label_, std::nullopt, header_error_};
    }
    std::vector<SubjectRecord> records;
    std::string block_value;
    std::string row_error;
    bool started = false;

    const auto finish = [&]() -> BlockItem {
      BlockItem item;
      item.index = index_++;
      item.label = label_.empty() ? block_value : label_ + ":" + block_value;
      if (!row_error.empty()) {
        item.error = row_error;
        return item;
      }
      try {
        item.block.emplace(item.index, records);
      } catch (const std::exception& e) {
        item.error = e.what();
      }
      return item;
    };

    for (;;) {
      if (!pending_.has_value()) {
        std::string line;
        if (!std::getline(in_, line)) break;  // EOF
        ++line_no_;
        if (blank(line)) continue;
        try {
          pending_ = parse_row(layout_, line, line_no_);
        } catch (const std::exception& e) {
          // Attribute the bad row to the block it belongs to. Without a block
          // column that is the (single) current block.
          if (row_error.empty() && started) row_error = e.what();
          if (!started) {
            started = true;
            row_error = e.what();
          }
          continue;
        }
      }
      if (started && layout_.block_col >= 0 &&
          pending_->block_value != block_value) {
        return finish();  // pending row opens the next block
      }
      started = true;
      block_value = pending_->block_value;
      records.push_back(std::move(pending_->record));
      pending_.reset();
    }
    if (!started) return std::nullopt;
    return finish();
  }

 private:
  std::unique_ptr<std::istream> owned_;  // keeps file streams alive
  std::istream& in_;
  std::string label_;
  long index_;
  long line_no_ = 0;
  CsvLayout layout_;
  std::string header_error_;
  bool header_emitted_ = false;
  std::optional<ParsedRow> pending_;
};

/// Blank-line-delimited chunks on one stream (stdin mode): a single header
/// line, then one block per paragraph.
class ChunkStreamReader final : public BlockReader {
 public:
  explicit ChunkStreamReader(std::istream& in) : in_(in) {
    std::string header;
    while (std::getline(in_, header)) {
      ++line_no_;
      if (!blank(header)) break;
    }
    try {
      layout_ = CsvLayout::from_header(header);
    } catch (const std::exception& e) {
      header_error_ = e.what();
    }
  }

  std::optional<BlockItem> next() override {
    if (!header_error_.empty()) {
      if (header_emitted_) return std::nullopt;
      header_emitted_ = true;
      return BlockItem{1, "stdin", std::nullopt, header_error_};
    }
    std::vector<SubjectRecord> records;
    std::string row_error;
    bool saw_rows = false;
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      if (blank(line)) {
        if (saw_rows) break;  // paragraph boundary
        continue;
      }
      saw_rows = true;
      try {
        records.push_back(parse_row(layout_, line, line_no_).record);
      } catch (const std::exception& e) {
        if (row_error.empty()) row_error = e.what();
      }
    }
    if (!saw_rows) return std::nullopt;
    BlockItem item;
    item.index = ++index_;
    item.label = "stdin";
    if (!row_error.empty()) {
      item.error = row_error;
      return item;
    }
    try {
      item.block.emplace(item.index, records);
    } catch (const std::exception& e) {
      item.error = e.what();
    }
    return item;
  }

 private:
  std::istream& in_;
  long line_no_ = 0;
  long index_ = 0;
  CsvLayout layout_;
  std::string header_error_;
  bool header_emitted_ = false;
};

/// One block (or more, if a file carries a block column) per CSV file of a
/// directory, in lexicographic filename order.
class DirectoryReader final : public BlockReader {
 public:
  explicit DirectoryReader(const std::string& dir) {
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      if (!entry.is_regular_file()) continue;
      if (entry.path().extension() != ".csv") continue;
      files_.push_back(entry.path());
    }
    std::sort(files_.begin(), files_.end());
  }

  std::optional<BlockItem> next() override {
    for (;;) {
      if (current_) {
        if (auto item = current_->next()) {
          next_index_ = item->index + 1;
          return item;
        }
        current_.reset();
      }
      if (file_at_ >= files_.size()) return std::nullopt;
      const auto path = files_[file_at_++];
      auto stream = std::make_unique<std::ifstream>(path);
      if (!*stream) {
        return BlockItem{next_index_++, path.filename().string(), std::nullopt,
                         "cannot open " + path.string()};
      }
      std::istream& ref = *stream;
      current_ = std::make_unique<CsvStreamReader>(
          std::move(stream), ref, path.filename().string(), next_index_);
    }
  }

 private:
  std::vector<std::filesystem::path> files_;
  std::size_t file_at_ = 0;
  std::unique_ptr<CsvStreamReader> current_;
  long next_index_ = 1;
};

}  // namespace detail

/// Open the input spec: "-" reads blank-line-delimited chunks from stdin_in,
/// a directory streams its *.csv files in name order, anything else is a CSV
/// file with an optional block column.
inline std::unique_ptr<BlockReader> open_block_reader(const std::string& spec,
                                                      std::istream& stdin_in) {
  if (spec == "-") return std::make_unique<detail::ChunkStreamReader>(stdin_in);
  if (std::filesystem::is_directory(spec))
    return std::make_unique<detail::DirectoryReader>(spec);
  if (!std::filesystem::exists(spec))
    throw invalid_input_error("input not found: " + spec);
  auto stream = std::make_unique<std::ifstream>(spec);
  if (!*stream) throw invalid_input_error("cannot open " + spec);
  std::istream& ref = *stream;
  return std::make_unique<detail::CsvStreamReader>(std::move(stream), ref,
                                                   std::filesystem::path(spec).filename().string(), 1);
}

struct IngestResult {
  std::vector<DataBlock> blocks;
  std::vector<BlockItem> errors;
};

/// Drain a reader into memory (used where all blocks are needed at once).
inline IngestResult ingest_blocks(const std::string& spec, std::istream& stdin_in) {
  IngestResult out;
  auto reader = open_block_reader(spec, stdin_in);
  while (auto item = reader->next()) {
    if (item->block.has_value()) {
      out.blocks.push_back(std::move(*item->block));
    } else {
      out.errors.push_back(std::move(*item));
    }
  }
  return out;
}

}  // namespace coxstream
