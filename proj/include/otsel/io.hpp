#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "otsel/potential.hpp"
#include "otsel/semidual.hpp"
#include "otsel/sinkhorn.hpp"

namespace otsel {

using Json = nlohmann::json;

// Point clouds. CSV files carry a header x0,...,x{d-1}; OTPC files start with
// the magic "OTPC", u32 n, u32 d and a zero u32, followed by n*d little-endian
// doubles in row-major order.
Matrix read_points_csv(const std::string& path);
void write_points_csv(const std::string& path, const Matrix& points);
Matrix read_points_otpc(const std::string& path);
void write_points_otpc(const std::string& path, const Matrix& points);
/// Dispatches on the extension: .csv, otherwise OTPC.
Matrix read_points(const std::string& path);
void write_points(const std::string& path, const Matrix& points);

// Potentials, as JSON documents with a `kind` field.
Json potential_to_json(const ConvexPotential& p);
PotentialPtr potential_from_json(const Json& j);
/// Writes {"kind": ..., ..., "provenance": provenance} when provenance is not
/// null.
void save_potential(const std::string& path, const ConvexPotential& p,
                    const Json& provenance = nullptr);
PotentialPtr load_potential(const std::string& path);
Json sinkhorn_provenance(const SinkhornDuals& duals);

Json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const Json& j);
Json vector_to_json(const Vector& v);
Vector vector_from_json(const Json& j);

/// Per-candidate J, error and rank; `labels` name the candidates.
Json selection_to_json(const SelectionOutcome& s, const std::vector<std::string>& labels);
/// candidate,label,j_value,error,j_rank,error_rank rows.
void write_selection_csv(const std::string& path, const SelectionOutcome& s,
                         const std::vector<std::string>& labels);

Json read_json(const std::string& path);
void write_json(const std::string& path, const Json& j);
void write_text(const std::string& path, const std::string& text);

/// 64-bit FNV-1a of a string, as 16 hex digits.
std::string fnv1a_hex(const std::string& text);

/// Shortest decimal text that round-trips the double.
std::string format_double(double v);

}  // namespace otsel
