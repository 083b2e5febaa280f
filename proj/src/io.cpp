#include "excel/io.hpp"

#include "excel/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <system_error>
#include <unistd.h>

namespace excel {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

std::optional<double> parse_real(std::string_view cell) {
  cell = trim(cell);
  if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
  if (cell.empty()) return std::nullopt;
  double v = 0.0;
  const auto [end, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || end != cell.data() + cell.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::optional<std::int64_t> parse_integer(std::string_view cell) {
  cell = trim(cell);
  if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
  std::int64_t v = 0;
  const auto [end, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (cell.empty() || ec != std::errc() || end != cell.data() + cell.size()) return std::nullopt;
  return v;
}

}  // namespace

std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
  if (text.starts_with("\xEF\xBB\xBF")) text.remove_prefix(3);
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false, field_started = false;
  std::size_t record_start_line = 1, line = 1;

  auto end_field = [&] {
    record.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    // A blank line is not a record.
    if (!(record.size() == 1 && record[0].empty())) records.push_back(std::move(record));
    record.clear();
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        if (c == '\n') ++line;
        field += c;
      }
      continue;
    }
    switch (c) {
      case '"':
        if (field_started && !trim(field).empty())
          throw Error(ErrorCode::ParseError, "stray quote in record starting at line " + std::to_string(line));
        field.clear();
        quoted = true;
        field_started = true;
        break;
      case ',':
        end_field();
        break;
      case '\r':
        if (i + 1 < text.size() && text[i + 1] == '\n') ++i;
        [[fallthrough]];
      case '\n':
        end_record();
        record_start_line = ++line;
        break;
      default:
        field += c;
        field_started = true;
    }
  }
  if (quoted)
    throw Error(ErrorCode::ParseError,
                "unterminated quoted field in record starting at line " + std::to_string(record_start_line));
  if (field_started || !field.empty() || !record.empty()) end_record();
  return records;
}

LoadedData ingest_csv_text(std::string_view text, const ColumnMapping& mapping) {
  const auto records = parse_csv(text);
  if (records.empty()) throw Error(ErrorCode::ParseError, "missing header row");
  const auto& header = records[0];
  std::map<std::string, std::size_t, std::less<>> column;
  for (std::size_t k = 0; k < header.size(); ++k) column.emplace(std::string(trim(header[k])), k);
  auto locate = [&](const std::string& name) {
    const auto it = column.find(name);
    if (it == column.end()) throw Error(ErrorCode::ParseError, "column '" + name + "' not found in header");
    return it->second;
  };
  if (mapping.y.empty()) throw Error(ErrorCode::InvalidArgument, "no outcome column mapped");
  if (mapping.x.empty()) throw Error(ErrorCode::InvalidArgument, "no exposure columns mapped");

  const std::size_t iy = locate(mapping.y);
  std::vector<std::size_t> ix, iz;
  for (const auto& name : mapping.x) ix.push_back(locate(name));
  for (const auto& name : mapping.z) iz.push_back(locate(name));
  const std::optional<std::size_t> ic = mapping.cluster ? std::optional(locate(*mapping.cluster)) : std::nullopt;
  const std::optional<std::size_t> is = mapping.strata ? std::optional(locate(*mapping.strata)) : std::nullopt;

  LoadedData out;
  std::vector<double> ys, xs, zs;
  std::vector<std::int64_t> cs, ss;
  std::vector<double> xrow(ix.size()), zrow(iz.size());
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& rec = records[r];
    ++out.report.rows_read;
    if (rec.size() != header.size())
      throw Error(ErrorCode::ParseError, "row " + std::to_string(r) + " has " + std::to_string(rec.size()) +
                                             " fields, header has " + std::to_string(header.size()));
    bool ok = true;
    const auto y = parse_real(rec[iy]);
    ok = ok && y.has_value();
    for (std::size_t k = 0; ok && k < ix.size(); ++k) {
      const auto v = parse_real(rec[ix[k]]);
      ok = v.has_value();
      if (ok) xrow[k] = *v;
    }
    for (std::size_t k = 0; ok && k < iz.size(); ++k) {
      const auto v = parse_real(rec[iz[k]]);
      ok = v.has_value();
      if (ok) zrow[k] = *v;
    }
    std::optional<std::int64_t> cid, sid;
    if (ok && ic) ok = (cid = parse_integer(rec[*ic])).has_value();
    if (ok && is) ok = (sid = parse_integer(rec[*is])).has_value();
    if (!ok) {
      ++out.report.dropped;
      out.report.dropped_rows.push_back(r);
      continue;
    }
    ys.push_back(*y);
    xs.insert(xs.end(), xrow.begin(), xrow.end());
    zs.insert(zs.end(), zrow.begin(), zrow.end());
    if (cid) cs.push_back(*cid);
    if (sid) ss.push_back(*sid);
  }
  if (ys.empty()) throw Error(ErrorCode::EmptyAfterCleaning, "no complete rows remain after dropping missing cells");

  const auto n = static_cast<Eigen::Index>(ys.size());
  Dataset& d = out.data;
  d.y = Eigen::Map<const Vector>(ys.data(), n);
  d.X = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      xs.data(), n, static_cast<Eigen::Index>(ix.size()));
  if (!iz.empty())
    d.Z = Matrix(Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        zs.data(), n, static_cast<Eigen::Index>(iz.size())));
  if (ic) d.cluster_id = std::move(cs);
  if (is) d.strata = std::move(ss);
  d.y_name = mapping.y;
  d.x_names = mapping.x;
  d.z_names = mapping.z;
  return out;
}

LoadedData ingest_csv(const std::filesystem::path& path, const ColumnMapping& mapping) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::FileNotFound, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return ingest_csv_text(buf.str(), mapping);
}

std::string format_double(double v) {
  char buf[32];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::string quote_csv_field(std::string_view field) {
  if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

std::string dataset_to_csv(const Dataset& data, const std::string& cluster_name, const std::string& strata_name) {
  const auto mapping = canonical_mapping(data, cluster_name, strata_name);
  std::string out;
  std::vector<std::string> header{mapping.y};
  header.insert(header.end(), mapping.x.begin(), mapping.x.end());
  header.insert(header.end(), mapping.z.begin(), mapping.z.end());
  if (mapping.cluster) header.push_back(*mapping.cluster);
  if (mapping.strata) header.push_back(*mapping.strata);
  for (std::size_t k = 0; k < header.size(); ++k) out += (k ? "," : "") + quote_csv_field(header[k]);
  out += '\n';
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    out += format_double(data.y[i]);
    for (Eigen::Index j = 0; j < data.d(); ++j) out += ',' + format_double(data.X(i, j));
    for (Eigen::Index j = 0; j < data.d_z(); ++j) out += ',' + format_double((*data.Z)(i, j));
    if (data.cluster_id) out += ',' + std::to_string((*data.cluster_id)[static_cast<std::size_t>(i)]);
    if (data.strata) out += ',' + std::to_string((*data.strata)[static_cast<std::size_t>(i)]);
    out += '\n';
  }
  return out;
}

ColumnMapping canonical_mapping(const Dataset& data, const std::string& cluster_name, const std::string& strata_name) {
  ColumnMapping m;
  m.y = data.y_name.empty() ? "y" : data.y_name;
  for (Eigen::Index j = 0; j < data.d(); ++j)
    m.x.push_back(static_cast<std::size_t>(j) < data.x_names.size() ? data.x_names[static_cast<std::size_t>(j)]
                                                                    : "x" + std::to_string(j + 1));
  for (Eigen::Index j = 0; j < data.d_z(); ++j)
    m.z.push_back(static_cast<std::size_t>(j) < data.z_names.size() ? data.z_names[static_cast<std::size_t>(j)]
                                                                    : "z" + std::to_string(j + 1));
  if (data.cluster_id) m.cluster = cluster_name;
  if (data.strata) m.strata = strata_name;
  return m;
}

Dataset aggregate_clusters(const Dataset& data, Centering centering) {
  data.validate();
  if (!data.cluster_id) throw Error(ErrorCode::MissingClusterIds, "cluster ids are required for aggregation");
  const auto n = data.n();
  const auto d = data.d(), dz = data.d_z();

  // Columns y | X | Z stacked so one pass handles every variable.
  Matrix V(n, 1 + d + dz);
  V.col(0) = data.y;
  V.middleCols(1, d) = data.X;
  if (dz) V.rightCols(dz) = *data.Z;

  if (centering == Centering::GrandMean) {
    V.rowwise() -= V.colwise().mean();
  } else {
    if (!data.strata) throw Error(ErrorCode::InvalidArgument, "per-stratum centering needs strata");
    std::map<std::int64_t, std::pair<Eigen::RowVectorXd, Eigen::Index>> sums;
    for (Eigen::Index i = 0; i < n; ++i) {
      auto [it, fresh] = sums.try_emplace((*data.strata)[static_cast<std::size_t>(i)],
                                          Eigen::RowVectorXd::Zero(V.cols()), 0);
      it->second.first += V.row(i);
      ++it->second.second;
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& [s, count] = sums.at((*data.strata)[static_cast<std::size_t>(i)]);
      V.row(i) -= s / static_cast<double>(count);
    }
  }

  std::map<std::int64_t, std::vector<Eigen::Index>> members;
  for (Eigen::Index i = 0; i < n; ++i) members[(*data.cluster_id)[static_cast<std::size_t>(i)]].push_back(i);

  Matrix A(static_cast<Eigen::Index>(members.size()), V.cols());
  Eigen::Index m = 0;
  for (const auto& [id, rows] : members) {
    Eigen::RowVectorXd s = Eigen::RowVectorXd::Zero(V.cols());
    for (auto i : rows) s += V.row(i);
    A.row(m++) = s / std::sqrt(static_cast<double>(rows.size()));
  }

  Dataset out;
  out.y = A.col(0);
  out.X = A.middleCols(1, d);
  if (dz) out.Z = Matrix(A.rightCols(dz));
  out.y_name = data.y_name;
  out.x_names = data.x_names;
  out.z_names = data.z_names;
  return out;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  namespace fs = std::filesystem;
  const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
  if (!fs::is_directory(dir)) throw Error(ErrorCode::FileNotFound, "output directory does not exist: " + dir.string());
  const fs::path tmp = dir / ("." + path.filename().string() + ".tmp." + std::to_string(::getpid()));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::FileNotFound, "cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw Error(ErrorCode::FileNotFound, "write failed for " + tmp.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error(ErrorCode::FileNotFound, "cannot move report into place at " + path.string());
  }
}

}  // namespace excel
