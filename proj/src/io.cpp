#include "otsel/io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "otsel/error.hpp"
#include "otsel/ssnb.hpp"
#include "otsel/synthetic.hpp"

namespace otsel {

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    std::size_t start = 0;
    while (start < cell.size() && cell[start] == ' ') ++start;
    out.push_back(cell.substr(start));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) throw InvalidArgument(where + ": cannot parse '" + s + "'");
  if (!std::isfinite(v)) throw InvalidArgument(where + ": non-finite value '" + s + "'");
  return v;
}

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(const unsigned char* b) {
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  unsigned char b[8];
  for (int k = 0; k < 8; ++k) b[k] = static_cast<unsigned char>(bits >> (8 * k));
  out.write(reinterpret_cast<const char*>(b), 8);
}

double get_f64(const unsigned char* b) {
  std::uint64_t bits = 0;
  for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(b[k]) << (8 * k);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw InvalidArgument("format_double failed");
  return std::string(buf, ptr);
}

Matrix read_points_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw InvalidArgument(path + ": empty file");
  const auto header = split_csv_line(line);
  const Index d = static_cast<Index>(header.size());
  for (Index k = 0; k < d; ++k)
    if (header[static_cast<std::size_t>(k)] != "x" + std::to_string(k))
      throw InvalidArgument(path + ": expected header x0,...,x" + std::to_string(d - 1));
  std::vector<double> data;
  Index n = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (static_cast<Index>(cells.size()) != d)
      throw InvalidArgument(path + ": row " + std::to_string(n + 1) + " has " +
                            std::to_string(cells.size()) + " columns, expected " +
                            std::to_string(d));
    for (const auto& c : cells) data.push_back(parse_double(c, path));
    ++n;
  }
  Matrix out(n, d);
  for (Index i = 0; i < n; ++i)
    for (Index k = 0; k < d; ++k) out(i, k) = data[static_cast<std::size_t>(i * d + k)];
  return out;
}

void write_points_csv(const std::string& path, const Matrix& points) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot open " + path + " for writing");
  for (Index k = 0; k < points.cols(); ++k) out << (k ? "," : "") << 'x' << k;
  out << '\n';
  for (Index i = 0; i < points.rows(); ++i) {
    for (Index k = 0; k < points.cols(); ++k) out << (k ? "," : "") << format_double(points(i, k));
    out << '\n';
  }
}

Matrix read_points_otpc(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open " + path);
  unsigned char header[16];
  if (!in.read(reinterpret_cast<char*>(header), 16)) throw InvalidArgument(path + ": short header");
  if (std::memcmp(header, "OTPC", 4) != 0) throw InvalidArgument(path + ": bad magic");
  const std::uint32_t n = get_u32(header + 4);
  const std::uint32_t d = get_u32(header + 8);
  std::vector<unsigned char> payload(static_cast<std::size_t>(n) * d * 8);
  if (!in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size())))
    throw InvalidArgument(path + ": truncated payload");
  Matrix out(n, d);
  for (std::uint32_t i = 0; i < n; ++i)
    for (std::uint32_t k = 0; k < d; ++k)
      out(i, k) = get_f64(payload.data() + (static_cast<std::size_t>(i) * d + k) * 8);
  return out;
}

void write_points_otpc(const std::string& path, const Matrix& points) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot open " + path + " for writing");
  out.write("OTPC", 4);
  put_u32(out, static_cast<std::uint32_t>(points.rows()));
  put_u32(out, static_cast<std::uint32_t>(points.cols()));
  put_u32(out, 0);
  for (Index i = 0; i < points.rows(); ++i)
    for (Index k = 0; k < points.cols(); ++k) put_f64(out, points(i, k));
}

Matrix read_points(const std::string& path) {
  return ends_with(path, ".csv") ? read_points_csv(path) : read_points_otpc(path);
}

void write_points(const std::string& path, const Matrix& points) {
  if (ends_with(path, ".csv"))
    write_points_csv(path, points);
  else
    write_points_otpc(path, points);
}

Json matrix_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Index k = 0; k < m.cols(); ++k) row.push_back(m(i, k));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const Json& j) {
  if (!j.is_array()) throw InvalidArgument("expected a JSON matrix");
  const Index n = static_cast<Index>(j.size());
  const Index d = n ? static_cast<Index>(j[0].size()) : 0;
  Matrix m(n, d);
  for (Index i = 0; i < n; ++i) {
    const Json& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Index>(row.size()) != d)
      throw InvalidArgument("ragged JSON matrix");
    for (Index k = 0; k < d; ++k) m(i, k) = row[static_cast<std::size_t>(k)].get<double>();
  }
  return m;
}

Json vector_to_json(const Vector& v) {
  Json out = Json::array();
  for (Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

Vector vector_from_json(const Json& j) {
  if (!j.is_array()) throw InvalidArgument("expected a JSON array");
  Vector v(static_cast<Index>(j.size()));
  for (Index i = 0; i < v.size(); ++i) v(i) = j[static_cast<std::size_t>(i)].get<double>();
  return v;
}

Json potential_to_json(const ConvexPotential& p) {
  if (const auto* q = dynamic_cast<const QuadraticPotential*>(&p))
    return {{"kind", "quadratic"}, {"q", matrix_to_json(q->q())}, {"b", vector_to_json(q->b())}};
  if (const auto* l = dynamic_cast<const LsePotential*>(&p))
    return {{"kind", "lse"},
            {"centers", matrix_to_json(l->centers())},
            {"shifts", vector_to_json(l->shifts())},
            {"temperature", l->temperature()}};
  if (const auto* r = dynamic_cast<const RegularizedPotential*>(&p))
    return {{"kind", "regularized"}, {"delta", r->delta()}, {"base", potential_to_json(*r->base())}};
  if (const auto* s = dynamic_cast<const SsnbPotential*>(&p))
    return {{"kind", "ssnb"},
            {"anchors", matrix_to_json(s->anchors())},
            {"values", vector_to_json(s->anchor_values())},
            {"gradients", matrix_to_json(s->anchor_gradients())},
            {"l", s->l()},
            {"L", s->big_l()},
            {"constraint_variant", to_string(s->variant())}};
  if (const auto* t = dynamic_cast<const TensorizedPotential*>(&p))
    return {{"kind", "tensorized"}, {"d", t->dimension()}};
  throw Unsupported("cannot serialize a potential of kind " + p.kind());
}

PotentialPtr potential_from_json(const Json& j) {
  try {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "quadratic")
      return std::make_shared<QuadraticPotential>(matrix_from_json(j.at("q")),
                                                  vector_from_json(j.at("b")));
    if (kind == "lse")
      return std::make_shared<LsePotential>(matrix_from_json(j.at("centers")),
                                            vector_from_json(j.at("shifts")),
                                            j.at("temperature").get<double>());
    if (kind == "regularized")
      return std::make_shared<RegularizedPotential>(potential_from_json(j.at("base")),
                                                    j.at("delta").get<double>());
    if (kind == "ssnb")
      return std::make_shared<SsnbPotential>(
          matrix_from_json(j.at("anchors")), vector_from_json(j.at("values")),
          matrix_from_json(j.at("gradients")), j.at("l").get<double>(), j.at("L").get<double>(),
          parse_constraint_variant(j.value("constraint_variant", std::string("taylor"))));
    if (kind == "tensorized") return std::make_shared<TensorizedPotential>(j.at("d").get<Index>());
    throw InvalidArgument("unknown potential kind '" + kind + "'");
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed potential JSON: ") + e.what());
  }
}

void save_potential(const std::string& path, const ConvexPotential& p, const Json& provenance) {
  Json j = potential_to_json(p);
  if (!provenance.is_null()) j["provenance"] = provenance;
  write_json(path, j);
}

PotentialPtr load_potential(const std::string& path) { return potential_from_json(read_json(path)); }

Json sinkhorn_provenance(const SinkhornDuals& duals) {
  return {{"model", "sinkhorn"},
          {"epsilon", duals.epsilon},
          {"tol", duals.tol},
          {"residual", duals.residual},
          {"iterations", duals.iterations}};
}

Json selection_to_json(const SelectionOutcome& s, const std::vector<std::string>& labels) {
  const std::vector<int> jr = [&] {
    std::vector<int> r(s.ranking.size());
    for (std::size_t k = 0; k < s.ranking.size(); ++k) r[s.ranking[k]] = static_cast<int>(k) + 1;
    return r;
  }();
  Json cands = Json::array();
  for (std::size_t i = 0; i < s.reports.size(); ++i) {
    Json c = {{"index", i}, {"label", i < labels.size() ? labels[i] : std::to_string(i)}, {"rank", jr[i]}};
    if (s.reports[i]) {
      c["j_value"] = s.reports[i]->j_value;
      c["first_term"] = s.reports[i]->first_term;
      c["second_term"] = s.reports[i]->second_term;
      c["delta"] = s.reports[i]->delta;
      c["unconverged_fraction"] = s.reports[i]->unconverged_fraction;
    } else {
      c["j_value"] = nullptr;
      c["unavailable"] = s.unavailable_reason[i];
    }
    if (s.errors) {
      c["error"] = (*s.errors)[i];
      c["error_rank"] = (*s.error_ranks)[i];
    }
    cands.push_back(std::move(c));
  }
  Json out = {{"selected", s.selected}, {"ranking", s.ranking}, {"candidates", std::move(cands)}};
  if (s.best) out["best"] = *s.best;
  if (s.deviation) {
    out["deviation_term"] = *s.deviation;
    out["deviation_sample_estimated"] = true;
  }
  if (s.bound) out["bound"] = *s.bound;
  return out;
}

void write_selection_csv(const std::string& path, const SelectionOutcome& s,
                         const std::vector<std::string>& labels) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot open " + path + " for writing");
  std::vector<int> jr(s.ranking.size());
  for (std::size_t k = 0; k < s.ranking.size(); ++k) jr[s.ranking[k]] = static_cast<int>(k) + 1;
  out << "candidate,label,j_value,error,j_rank,error_rank\n";
  for (std::size_t i = 0; i < s.reports.size(); ++i) {
    out << i << ',' << (i < labels.size() ? labels[i] : std::to_string(i)) << ','
        << (s.reports[i] ? format_double(s.reports[i]->j_value) : "") << ','
        << (s.errors ? format_double((*s.errors)[i]) : "") << ',' << jr[i] << ','
        << (s.error_ranks ? std::to_string((*s.error_ranks)[i]) : "") << '\n';
  }
}

Json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(path + ": " + e.what());
  }
}

void write_json(const std::string& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot open " + path + " for writing");
  out << text;
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace otsel
