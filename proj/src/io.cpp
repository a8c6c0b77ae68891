#include "ddia/io.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace ddia {

namespace {

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64(std::ostream& os, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(os, bits);
}

void put_str(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw IoError("truncated file");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw IoError("truncated file");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& is) {
  uint64_t bits = get_u64(is);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

std::string get_str(std::istream& is) {
  uint32_t n = get_u32(is);
  if (n > (1u << 24)) throw IoError("string length field is implausibly large");
  std::string s(n, '\0');
  if (n && !is.read(s.data(), n)) throw IoError("truncated file");
  return s;
}

void expect_magic(std::istream& is, const char* magic, const char* what) {
  char got[4];
  if (!is.read(got, 4)) throw IoError(std::string("truncated file: missing ") + what + " magic");
  if (std::memcmp(got, magic, 4) != 0)
    throw IoError(std::string("bad magic: not a ") + what + " file");
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  return os;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open for reading: " + path);
  return is;
}

constexpr uint32_t kDatasetVersion = 1;
constexpr uint32_t kCheckpointVersion = 1;

}  // namespace

uint64_t fnv1a_hash(const std::string& bytes) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

void persist_dataset(const Dataset& dataset, const std::string& path) {
  if (dataset.size() == 0) throw IoError("refusing to persist an empty dataset");
  std::ofstream os = open_out(path);
  os.write("DDIA", 4);
  put_u32(os, kDatasetVersion);
  put_u64(os, fnv1a_hash(dataset.grid_id));
  put_str(os, dataset.grid_id);
  put_u64(os, dataset.seed);
  put_u32(os, static_cast<uint32_t>(dataset.T));
  put_u32(os, static_cast<uint32_t>(dataset.size()));
  put_u32(os, static_cast<uint32_t>(dataset.label_buses.size()));
  for (int b : dataset.label_buses) put_u32(os, static_cast<uint32_t>(b));
  put_str(os, dataset.meta);
  const Shape& s0 = dataset.windows[0].x.shape;
  put_u32(os, static_cast<uint32_t>(s0.size()));
  for (int d : s0) put_u32(os, static_cast<uint32_t>(d));
  for (const InputWindow& w : dataset.windows) {
    if (w.x.shape != s0) throw IoError("dataset windows have inconsistent shapes");
    for (long i = 0; i < w.x.data.size(); ++i) put_f64(os, w.x.data(i));
  }
  const long L = dataset.n_labels();
  for (const Vec& y : dataset.labels) {
    if (y.size() != L) throw IoError("label width does not match label_buses");
    for (long i = 0; i < L; ++i) put_f64(os, y(i));
  }
  if (!os) throw IoError("write failed: " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream is = open_in(path);
  expect_magic(is, "DDIA", "dataset");
  uint32_t version = get_u32(is);
  if (version != kDatasetVersion)
    throw IoError("unsupported dataset version " + std::to_string(version));
  uint64_t hash = get_u64(is);
  Dataset ds;
  ds.grid_id = get_str(is);
  if (hash != fnv1a_hash(ds.grid_id)) throw IoError("grid hash mismatch: corrupted header");
  ds.seed = get_u64(is);
  ds.T = static_cast<int>(get_u32(is));
  uint32_t n = get_u32(is);
  uint32_t n_lbus = get_u32(is);
  ds.label_buses.resize(n_lbus);
  for (uint32_t i = 0; i < n_lbus; ++i) ds.label_buses[i] = static_cast<int>(get_u32(is));
  ds.meta = get_str(is);
  uint32_t rank = get_u32(is);
  if (rank == 0 || rank > 8) throw IoError("corrupted window shape");
  Shape shape(rank);
  long numel = 1;
  for (uint32_t i = 0; i < rank; ++i) {
    shape[i] = static_cast<int>(get_u32(is));
    numel *= shape[i];
  }
  ds.windows.resize(n);
  for (uint32_t w = 0; w < n; ++w) {
    ds.windows[w].x = Tensor(shape);
    for (long i = 0; i < numel; ++i) ds.windows[w].x.data(i) = get_f64(is);
  }
  const long L = ds.n_labels();
  ds.labels.resize(n);
  for (uint32_t w = 0; w < n; ++w) {
    ds.labels[w] = Vec(L);
    for (long i = 0; i < L; ++i) ds.labels[w](i) = get_f64(is);
  }
  return ds;
}

void save_parameters(const std::string& path, const std::map<std::string, Tensor>& params) {
  std::ofstream os = open_out(path);
  os.write("DDCK", 4);
  put_u32(os, kCheckpointVersion);
  put_u32(os, static_cast<uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    put_str(os, name);
    put_u32(os, static_cast<uint32_t>(t.shape.size()));
    for (int d : t.shape) put_u32(os, static_cast<uint32_t>(d));
    for (long i = 0; i < t.data.size(); ++i) put_f64(os, t.data(i));
  }
  if (!os) throw IoError("write failed: " + path);
}

std::map<std::string, Tensor> load_parameters(const std::string& path) {
  std::ifstream is = open_in(path);
  expect_magic(is, "DDCK", "checkpoint");
  uint32_t version = get_u32(is);
  if (version != kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  uint32_t count = get_u32(is);
  std::map<std::string, Tensor> params;
  for (uint32_t p = 0; p < count; ++p) {
    std::string name = get_str(is);
    uint32_t rank = get_u32(is);
    if (rank > 8) throw IoError("corrupted parameter shape for " + name);
    Shape shape(rank);
    long numel = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      shape[i] = static_cast<int>(get_u32(is));
      numel *= shape[i];
    }
    Tensor t(shape.empty() ? Shape{1} : shape);
    for (long i = 0; i < numel; ++i) t.data(i) = get_f64(is);
    params.emplace(name, std::move(t));
  }
  return params;
}

namespace {

Tensor scalar_tensor(double v) {
  Tensor t({1});
  t.data(0) = v;
  return t;
}

Tensor string_tensor(const std::string& s) {
  Tensor t({std::max<int>(1, static_cast<int>(s.size()))});
  t.data.setZero();
  for (size_t i = 0; i < s.size(); ++i) t.data(static_cast<long>(i)) = s[i];
  return t;
}

std::string tensor_string(const Tensor& t) {
  std::string s;
  for (long i = 0; i < t.data.size(); ++i) {
    int c = static_cast<int>(t.data(i));
    if (c > 0) s.push_back(static_cast<char>(c));
  }
  return s;
}

double meta_scalar(const std::map<std::string, Tensor>& m, const std::string& key) {
  auto it = m.find(key);
  if (it == m.end()) throw IoError("checkpoint is missing entry " + key);
  return it->second.data(0);
}

}  // namespace

void save_localizer(const std::string& path, const Localizer& model) {
  std::map<std::string, Tensor> all = model.params;
  all["meta.n_bus"] = scalar_tensor(model.n_bus);
  all["meta.c_in"] = scalar_tensor(model.c_in);
  all["meta.standardized"] = scalar_tensor(model.standardized ? 1 : 0);
  Tensor lb({std::max<int>(1, static_cast<int>(model.label_buses.size()))});
  lb.data.setZero();
  for (size_t i = 0; i < model.label_buses.size(); ++i)
    lb.data(static_cast<long>(i)) = model.label_buses[i];
  all["meta.n_label_buses"] = scalar_tensor(static_cast<double>(model.label_buses.size()));
  all["meta.label_buses"] = lb;
  all["cfg.T"] = scalar_tensor(model.cfg.T);
  all["cfg.kernel"] = scalar_tensor(model.cfg.kernel);
  Tensor dil({std::max<int>(1, static_cast<int>(model.cfg.dilations.size()))});
  dil.data.setZero();
  for (size_t i = 0; i < model.cfg.dilations.size(); ++i)
    dil.data(static_cast<long>(i)) = model.cfg.dilations[i];
  all["cfg.n_dilations"] = scalar_tensor(static_cast<double>(model.cfg.dilations.size()));
  all["cfg.dilations"] = dil;
  all["cfg.hidden"] = scalar_tensor(model.cfg.hidden);
  all["cfg.scale"] = scalar_tensor(model.cfg.scale);
  all["cfg.cheb_order"] = scalar_tensor(model.cfg.cheb_order);
  all["cfg.tau"] = scalar_tensor(model.cfg.tau);
  all["cfg.dropout"] = scalar_tensor(model.cfg.dropout);
  all["cfg.n_blocks"] = scalar_tensor(model.cfg.n_blocks);
  all["cfg.tanh_gate"] = scalar_tensor(model.cfg.tanh_gate ? 1 : 0);
  all["cfg.structure"] = string_tensor(model.cfg.structure);
  if (model.standardized) {
    all["stat.mu"] = model.mu;
    all["stat.sd"] = model.sd;
  }
  save_parameters(path, all);
}

Localizer load_localizer(const std::string& path, const PowerGrid& grid) {
  std::map<std::string, Tensor> all = load_parameters(path);
  LocalizerConfig cfg;
  cfg.T = static_cast<int>(meta_scalar(all, "cfg.T"));
  cfg.kernel = static_cast<int>(meta_scalar(all, "cfg.kernel"));
  int nd = static_cast<int>(meta_scalar(all, "cfg.n_dilations"));
  cfg.dilations.assign(nd, 1);
  for (int i = 0; i < nd; ++i) cfg.dilations[i] = static_cast<int>(all.at("cfg.dilations").data(i));
  cfg.hidden = static_cast<int>(meta_scalar(all, "cfg.hidden"));
  cfg.scale = meta_scalar(all, "cfg.scale");
  cfg.cheb_order = static_cast<int>(meta_scalar(all, "cfg.cheb_order"));
  cfg.tau = meta_scalar(all, "cfg.tau");
  cfg.dropout = meta_scalar(all, "cfg.dropout");
  cfg.n_blocks = static_cast<int>(meta_scalar(all, "cfg.n_blocks"));
  cfg.tanh_gate = meta_scalar(all, "cfg.tanh_gate") != 0;
  cfg.structure = tensor_string(all.at("cfg.structure"));

  int n_bus = static_cast<int>(meta_scalar(all, "meta.n_bus"));
  if (n_bus != grid.n())
    throw IoError("checkpoint was trained on a " + std::to_string(n_bus) +
                  "-bus grid, but the given case has " + std::to_string(grid.n()));
  Localizer model = make_localizer(grid, cfg, 0);
  int n_lb = static_cast<int>(meta_scalar(all, "meta.n_label_buses"));
  model.label_buses.assign(n_lb, 0);
  for (int i = 0; i < n_lb; ++i)
    model.label_buses[i] = static_cast<int>(all.at("meta.label_buses").data(i));
  model.standardized = meta_scalar(all, "meta.standardized") != 0;
  if (model.standardized) {
    model.mu = all.at("stat.mu");
    model.sd = all.at("stat.sd");
  }
  for (auto& [name, t] : model.params) {
    auto it = all.find(name);
    if (it == all.end()) throw IoError("checkpoint is missing parameter " + name);
    if (it->second.shape != t.shape)
      throw IoError("checkpoint parameter " + name + " has the wrong shape");
    t = it->second;
    t.requires_grad = true;
  }
  return model;
}

std::string csv_escape(const std::string& field) {
  bool need = field.find_first_of(",\"\r\n") != std::string::npos;
  if (!need) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += '"';
  return out;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  double back = std::strtod(buf, nullptr);
  if (back == v) {
    // Trim to the shortest representation that still round-trips.
    for (int prec = 1; prec < 17; ++prec) {
      char s[64];
      std::snprintf(s, sizeof s, "%.*g", prec, v);
      if (std::strtod(s, nullptr) == v) return s;
    }
  }
  return buf;
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  auto line = [&](const std::vector<std::string>& cells) {
    for (size_t i = 0; i < cells.size(); ++i) {
      if (i) os << ',';
      os << csv_escape(cells[i]);
    }
    os << "\r\n";
  };
  line(header);
  for (const auto& r : rows) line(r);
  if (!os) throw IoError("write failed: " + path);
}

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

}  // namespace

void write_svg_plot(const std::string& path, const std::string& title,
                    const std::string& x_label, const std::string& y_label,
                    const std::vector<PlotSeries>& series) {
  const double W = 720, H = 480, ml = 70, mr = 150, mt = 50, mb = 55;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series)
    for (size_t i = 0; i < s.x.size(); ++i) {
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  if (xmin > xmax) {
    xmin = 0;
    xmax = 1;
    ymin = 0;
    ymax = 1;
  }
  if (xmax - xmin < 1e-12) {
    xmin -= 0.5;
    xmax += 0.5;
  }
  if (ymax - ymin < 1e-12) {
    ymin -= 0.5;
    ymax += 0.5;
  }
  double pw = W - ml - mr, ph = H - mt - mb;
  auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y) { return mt + ph - (y - ymin) / (ymax - ymin) * ph; };
  static const char* colors[] = {"#1f6fb2", "#d1495b", "#2e8b57", "#b8860b",
                                 "#6a468f", "#3aa3a0", "#8a5a44", "#555555"};

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" viewBox=\"0 0 " << W << ' ' << H << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\" "
         "font-family=\"sans-serif\">"
      << xml_escape(title) << "</text>\n";
  // Axes.
  svg << "<line x1=\"" << ml << "\" y1=\"" << mt + ph << "\" x2=\"" << ml + pw << "\" y2=\""
      << mt + ph << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << mt + ph
      << "\" stroke=\"black\"/>\n";
  // Ticks.
  for (int t = 0; t <= 5; ++t) {
    double xv = xmin + (xmax - xmin) * t / 5.0;
    double yv = ymin + (ymax - ymin) * t / 5.0;
    svg << "<line x1=\"" << px(xv) << "\" y1=\"" << mt + ph << "\" x2=\"" << px(xv) << "\" y2=\""
        << mt + ph + 5 << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << px(xv) << "\" y=\"" << mt + ph + 20
        << "\" text-anchor=\"middle\" font-size=\"11\" font-family=\"sans-serif\">"
        << format_double(std::round(xv * 1e4) / 1e4) << "</text>\n";
    svg << "<line x1=\"" << ml - 5 << "\" y1=\"" << py(yv) << "\" x2=\"" << ml << "\" y2=\""
        << py(yv) << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << ml - 8 << "\" y=\"" << py(yv) + 4
        << "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">"
        << format_double(std::round(yv * 1e4) / 1e4) << "</text>\n";
  }
  svg << "<text x=\"" << ml + pw / 2 << "\" y=\"" << H - 12
      << "\" text-anchor=\"middle\" font-size=\"13\" font-family=\"sans-serif\">"
      << xml_escape(x_label) << "</text>\n";
  svg << "<text x=\"18\" y=\"" << mt + ph / 2
      << "\" text-anchor=\"middle\" font-size=\"13\" font-family=\"sans-serif\" "
         "transform=\"rotate(-90 18 "
      << mt + ph / 2 << ")\">" << xml_escape(y_label) << "</text>\n";
  for (size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const char* color = colors[si % 8];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.8\" points=\"";
    for (size_t i = 0; i < s.x.size(); ++i) {
      if (i) svg << ' ';
      svg << px(s.x[i]) << ',' << py(s.y[i]);
    }
    svg << "\"/>\n";
    double ly = mt + 16 + 18 * static_cast<double>(si);
    svg << "<line x1=\"" << ml + pw + 10 << "\" y1=\"" << ly << "\" x2=\"" << ml + pw + 34
        << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"1.8\"/>\n";
    svg << "<text x=\"" << ml + pw + 40 << "\" y=\"" << ly + 4
        << "\" font-size=\"12\" font-family=\"sans-serif\">" << xml_escape(s.name)
        << "</text>\n";
  }
  svg << "</svg>\n";

  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << svg.str();
  if (!os) throw IoError("write failed: " + path);
}

}  // namespace ddia
