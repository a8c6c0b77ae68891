#pragma once

#include <map>
#include <string>
#include <vector>

#include "ddia/evalkit.hpp"

namespace ddia {

struct IoError : Error {
  using Error::Error;
};

inline constexpr const char* kToolVersion = "1.0.0";

// --- Dataset persistence -----------------------------------------------------
// Binary layout: magic "DDIA", version u32, grid hash u64, string/count header,
// then all window tensors and label vectors as little-endian 8-byte floats.
void persist_dataset(const Dataset& dataset, const std::string& path);
Dataset load_dataset(const std::string& path);

// --- Parameter checkpoints ---------------------------------------------------
// Binary layout: magic "DDCK", version u32, param count u32, then per parameter
// (name length u32, name bytes, rank u32, dims u32..., little-endian 8-byte
// floats).
void save_parameters(const std::string& path, const std::map<std::string, Tensor>& params);
std::map<std::string, Tensor> load_parameters(const std::string& path);

// Full model checkpoint: parameters plus configuration and standardization
// statistics encoded as extra entries in the same parameter format. Loading
// rebuilds the wavelet basis from the grid.
void save_localizer(const std::string& path, const Localizer& model);
Localizer load_localizer(const std::string& path, const PowerGrid& grid);

// --- CSV reports (RFC 4180 quoting) -----------------------------------------
std::string csv_escape(const std::string& field);
std::string format_double(double v);  // shortest round-trip decimal form
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

// --- SVG line plots (standalone, no external assets) --------------------------
struct PlotSeries {
  std::string name;
  std::vector<double> x, y;
};
void write_svg_plot(const std::string& path, const std::string& title,
                    const std::string& x_label, const std::string& y_label,
                    const std::vector<PlotSeries>& series);

// FNV-1a over a byte string; used for the dataset grid hash.
uint64_t fnv1a_hash(const std::string& bytes);

}  // namespace ddia
