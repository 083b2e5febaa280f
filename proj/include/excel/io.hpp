#pragma once

#include "excel/dataset.hpp"

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace excel {

// RFC-4180 records: quoted fields, doubled quotes, CRLF or LF, embedded
// newlines inside quotes. A leading UTF-8 BOM is skipped. Throws ParseError
// with the record number on an unterminated quote.
std::vector<std::vector<std::string>> parse_csv(std::string_view text);

struct ColumnMapping {
  std::string y;
  std::vector<std::string> x;
  std::vector<std::string> z;
  std::optional<std::string> cluster;
  std::optional<std::string> strata;
};

struct LoadReport {
  std::size_t rows_read = 0;
  std::size_t dropped = 0;
  std::vector<std::size_t> dropped_rows;  // 1-based data rows, header excluded
};

struct LoadedData {
  Dataset data;
  LoadReport report;
};

// Listwise deletion: a row with an empty, NA or unparsable mapped cell (or a
// non-integer cluster id) is dropped and counted. Ragged rows and missing
// mapped columns are ParseError. FileNotFound, EmptyAfterCleaning.
LoadedData ingest_csv(const std::filesystem::path& path, const ColumnMapping& mapping);
LoadedData ingest_csv_text(std::string_view text, const ColumnMapping& mapping);

// Shortest round-trip decimal form.
std::string format_double(double v);

std::string quote_csv_field(std::string_view field);

// Header y, x..., z..., then cluster and strata when present.
std::string dataset_to_csv(const Dataset& data, const std::string& cluster_name = "cluster",
                           const std::string& strata_name = "strata");

// Mapping that re-reads a dataset written by dataset_to_csv.
ColumnMapping canonical_mapping(const Dataset& data, const std::string& cluster_name = "cluster",
                                const std::string& strata_name = "strata");

enum class Centering { GrandMean, PerStratum };

// One row per cluster, ascending cluster id: every variable centered, summed
// over the cluster and divided by sqrt(R_m). Cluster ids and strata dropped.
Dataset aggregate_clusters(const Dataset& data, Centering centering = Centering::GrandMean);

// Writes through a sibling temporary file and renames it over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

}  // namespace excel
