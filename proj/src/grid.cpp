#include "ddia/grid.hpp"

#include <algorithm>
#include <cctype>
#include <deque>
#include <fstream>
#include <sstream>

#include "ddia/rng.hpp"

namespace ddia {

namespace {

// Strip '%' comments and split the case text into lines.
std::vector<std::string> clean_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::string cur;
  for (char c : text) {
    if (c == '\n') {
      lines.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  lines.push_back(cur);
  for (auto& ln : lines) {
    auto pos = ln.find('%');
    if (pos != std::string::npos) ln.erase(pos);
  }
  return lines;
}

struct MatrixBlock {
  std::vector<std::vector<double>> rows;
  int start_line = 0;
};

// Parse "mpc.<name> = [ rows... ];" blocks and scalar assignments.
struct CaseText {
  double baseMVA = -1;
  std::unordered_map<std::string, MatrixBlock> matrices;
};

bool parse_row(const std::string& src, std::vector<double>& out, int line_no) {
  out.clear();
  std::istringstream is(src);
  std::string tok;
  while (is >> tok) {
    if (tok == ";" || tok == "];") break;
    // Allow trailing ';' or ',' glued to a number.
    while (!tok.empty() && (tok.back() == ';' || tok.back() == ',' || tok.back() == ']')) tok.pop_back();
    if (tok.empty()) continue;
    try {
      size_t used = 0;
      double v = std::stod(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
      out.push_back(v);
    } catch (const std::exception&) {
      throw ParseError(line_no, "bad numeric token '" + tok + "'");
    }
  }
  return !out.empty();
}

CaseText scan_case(const std::string& text) {
  CaseText out;
  auto lines = clean_lines(text);
  size_t i = 0;
  while (i < lines.size()) {
    const std::string& ln = lines[i];
    auto eq = ln.find('=');
    auto mpc = ln.find("mpc.");
    if (mpc == std::string::npos || eq == std::string::npos || eq < mpc) {
      ++i;
      continue;
    }
    std::string name = ln.substr(mpc + 4, eq - (mpc + 4));
    name.erase(std::remove_if(name.begin(), name.end(), ::isspace), name.end());
    std::string rhs = ln.substr(eq + 1);
    if (rhs.find('[') == std::string::npos) {
      // Scalar assignment.
      std::string v = rhs;
      v.erase(std::remove(v.begin(), v.end(), ';'), v.end());
      try {
        if (name == "baseMVA") out.baseMVA = std::stod(v);
      } catch (const std::exception&) {
        throw ParseError(static_cast<int>(i + 1), "bad scalar for mpc." + name);
      }
      ++i;
      continue;
    }
    // Matrix block: rows until a line containing ']'.
    MatrixBlock blk;
    blk.start_line = static_cast<int>(i + 1);
    std::string first_row = rhs.substr(rhs.find('[') + 1);
    bool closed = first_row.find(']') != std::string::npos;
    if (auto p = first_row.find(']'); p != std::string::npos) first_row.erase(p);
    std::vector<double> row;
    if (parse_row(first_row, row, static_cast<int>(i + 1))) blk.rows.push_back(row);
    ++i;
    while (!closed && i < lines.size()) {
      std::string body = lines[i];
      closed = body.find(']') != std::string::npos;
      if (auto p = body.find(']'); p != std::string::npos) body.erase(p);
      // A row may contain several ';'-separated records.
      std::string piece;
      std::istringstream split(body);
      while (std::getline(split, piece, ';')) {
        if (parse_row(piece, row, static_cast<int>(i + 1))) blk.rows.push_back(row);
      }
      ++i;
    }
    if (!closed) throw ParseError(blk.start_line, "unterminated matrix mpc." + name);
    out.matrices[name] = std::move(blk);
  }
  return out;
}

}  // namespace

CMat admittance_matrix(const PowerGrid& grid) {
  const int n = grid.n();
  CMat Y = CMat::Zero(n, n);
  for (const auto& br : grid.branches) {
    if (!br.on) continue;
    if (br.r == 0.0 && br.x == 0.0)
      throw NumericalError("in-service branch with zero series impedance");
    cplx ys = 1.0 / cplx(br.r, br.x);
    cplx bc(0.0, br.b / 2.0);
    double tap = grid.tap_of(br);
    Y(br.from, br.from) += (ys + bc) / (tap * tap);
    Y(br.to, br.to) += ys + bc;
    Y(br.from, br.to) += -ys / tap;
    Y(br.to, br.from) += -ys / tap;
  }
  for (int i = 0; i < n; ++i)
    Y(i, i) += cplx(grid.buses[i].Gs, grid.buses[i].Bs) / grid.baseMVA;
  return Y;
}

Mat coupling_weights(const PowerGrid& grid, const CMat& Y) {
  const int n = grid.n();
  Mat W = Mat::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j) W(i, j) = std::abs(Y(i, j));
  (void)grid;
  return W;
}

PowerGrid parse_matpower_case(const std::string& text) {
  CaseText ct = scan_case(text);
  if (ct.baseMVA <= 0) throw ParseError(1, "missing mpc.baseMVA");
  auto need = [&](const char* name) -> const MatrixBlock& {
    auto it = ct.matrices.find(name);
    if (it == ct.matrices.end())
      throw ParseError(1, std::string("missing section mpc.") + name);
    return it->second;
  };
  const MatrixBlock& mb_bus = need("bus");
  const MatrixBlock& mb_gen = need("gen");
  const MatrixBlock& mb_branch = need("branch");

  PowerGrid g;
  g.baseMVA = ct.baseMVA;

  for (size_t r = 0; r < mb_bus.rows.size(); ++r) {
    const auto& row = mb_bus.rows[r];
    if (row.size() < 13)
      throw ParseError(mb_bus.start_line + static_cast<int>(r),
                       "bus row needs 13 columns, got " + std::to_string(row.size()));
    Bus b;
    b.id = static_cast<int>(row[0]);
    int kind = static_cast<int>(row[1]);
    if (kind < 1 || kind > 3)
      throw ParseError(mb_bus.start_line + static_cast<int>(r), "bus type must be 1/2/3");
    b.kind = static_cast<BusKind>(kind);
    b.Pd = row[2];
    b.Qd = row[3];
    b.Gs = row[4];
    b.Bs = row[5];
    b.Vm = row[7];
    b.Va = row[8];
    b.baseKV = row[9];
    b.Vmax = row[11];
    b.Vmin = row[12];
    if (b.Vmin >= b.Vmax)
      throw ParseError(mb_bus.start_line + static_cast<int>(r), "Vmin must be < Vmax");
    if (g.id_to_int.count(b.id))
      throw ParseError(mb_bus.start_line + static_cast<int>(r),
                       "duplicate bus id " + std::to_string(b.id));
    g.id_to_int[b.id] = static_cast<int>(g.buses.size());
    g.ext_ids.push_back(b.id);
    g.buses.push_back(b);
  }

  int slack_count = 0;
  for (int i = 0; i < g.n(); ++i) {
    if (g.buses[i].kind == BusKind::Slack) {
      g.slack = i;
      ++slack_count;
    }
  }
  if (slack_count != 1)
    throw ParseError(mb_bus.start_line,
                     "grid needs exactly one slack bus, found " + std::to_string(slack_count));

  for (size_t r = 0; r < mb_gen.rows.size(); ++r) {
    const auto& row = mb_gen.rows[r];
    if (row.size() < 10)
      throw ParseError(mb_gen.start_line + static_cast<int>(r), "gen row needs >= 10 columns");
    Gen gen;
    int ext = static_cast<int>(row[0]);
    auto it = g.id_to_int.find(ext);
    if (it == g.id_to_int.end())
      throw ParseError(mb_gen.start_line + static_cast<int>(r),
                       "gen references unknown bus " + std::to_string(ext));
    gen.bus = it->second;
    gen.Pg = row[1];
    gen.Qg = row[2];
    gen.Qmax = row[3];
    gen.Qmin = row[4];
    gen.Vg = row[5];
    gen.mBase = row[6];
    gen.on = row[7] > 0;
    gen.Pmax = row[8];
    gen.Pmin = row[9];
    g.gens.push_back(gen);
  }

  for (size_t r = 0; r < mb_branch.rows.size(); ++r) {
    const auto& row = mb_branch.rows[r];
    if (row.size() < 13)
      throw ParseError(mb_branch.start_line + static_cast<int>(r), "branch row needs 13 columns");
    Branch br;
    int f_ext = static_cast<int>(row[0]);
    int t_ext = static_cast<int>(row[1]);
    auto fi = g.id_to_int.find(f_ext);
    auto ti = g.id_to_int.find(t_ext);
    if (fi == g.id_to_int.end() || ti == g.id_to_int.end())
      throw ParseError(mb_branch.start_line + static_cast<int>(r),
                       "branch references unknown bus");
    br.from = fi->second;
    br.to = ti->second;
    if (br.from == br.to)
      throw ParseError(mb_branch.start_line + static_cast<int>(r), "branch endpoints equal");
    br.r = row[2];
    br.x = row[3];
    br.b = row[4];
    br.rateA = row[5];
    br.tap = row[8];
    br.on = row[10] > 0;
    if (br.on && br.x == 0.0 && br.r == 0.0)
      throw ParseError(mb_branch.start_line + static_cast<int>(r),
                       "in-service branch with zero impedance");
    g.branches.push_back(br);
  }

  g.Y = admittance_matrix(g);
  g.W = coupling_weights(g, g.Y);
  return g;
}

PowerGrid load_case_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open case file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_matpower_case(ss.str());
}

std::string serialize_case(const PowerGrid& g) {
  std::ostringstream os;
  os.setf(std::ios::fmtflags(0), std::ios::floatfield);
  os.precision(10);
  os << "function mpc = grid_case\n";
  os << "mpc.baseMVA = " << g.baseMVA << ";\n";
  os << "mpc.bus = [\n";
  for (const auto& b : g.buses) {
    os << "  " << b.id << " " << static_cast<int>(b.kind) << " " << b.Pd << " " << b.Qd << " "
       << b.Gs << " " << b.Bs << " 1 " << b.Vm << " " << b.Va << " " << b.baseKV << " 1 "
       << b.Vmax << " " << b.Vmin << ";\n";
  }
  os << "];\n";
  os << "mpc.gen = [\n";
  for (const auto& gen : g.gens) {
    os << "  " << g.ext_ids[gen.bus] << " " << gen.Pg << " " << gen.Qg << " " << gen.Qmax << " "
       << gen.Qmin << " " << gen.Vg << " " << gen.mBase << " " << (gen.on ? 1 : 0) << " "
       << gen.Pmax << " " << gen.Pmin << ";\n";
  }
  os << "];\n";
  os << "mpc.branch = [\n";
  for (const auto& br : g.branches) {
    os << "  " << g.ext_ids[br.from] << " " << g.ext_ids[br.to] << " " << br.r << " " << br.x
       << " " << br.b << " " << br.rateA << " 0 0 " << br.tap << " 0 " << (br.on ? 1 : 0)
       << " -360 360;\n";
  }
  os << "];\n";
  return os.str();
}

Mat normalized_laplacian(const PowerGrid& grid) {
  const int n = grid.n();
  Vec deg = grid.W.rowwise().sum();
  for (int i = 0; i < n; ++i)
    if (deg(i) <= 0)
      throw NumericalError("isolated bus " + std::to_string(grid.ext_ids[i]) +
                           " has zero coupling degree");
  Vec dmh = deg.array().rsqrt();
  Mat L = Mat::Identity(n, n) - dmh.asDiagonal() * grid.W * dmh.asDiagonal();
  // Symmetrize against floating-point drift.
  L = 0.5 * (L + L.transpose()).eval();
  return L;
}

PartialGrid degrade_topology(const PowerGrid& grid, double integrity, uint64_t seed) {
  if (integrity < 0.0 || integrity > 1.0) throw Error("integrity must lie in [0, 1]");
  const int f = grid.n_branches();
  int k = static_cast<int>(std::lround(integrity * f));
  std::vector<int> order(f);
  for (int i = 0; i < f; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  PartialGrid pg;
  pg.base = &grid;
  pg.integrity = integrity;
  pg.known.assign(f, false);
  for (int i = 0; i < k; ++i) pg.known[static_cast<size_t>(order[i])] = true;
  return pg;
}

AttackRegion partition_region(const PowerGrid& grid, const std::set<int>& attacked) {
  if (attacked.empty()) throw Error("attack region must contain at least one bus");
  for (int a : attacked) {
    if (a < 0 || a >= grid.n()) throw Error("attack region references unknown bus index");
    if (!grid.is_load_bus(a))
      throw Error("attack region may only contain load (PQ) buses; bus " +
                  std::to_string(grid.ext_ids[a]) + " is not one");
  }
  AttackRegion region;
  region.A.assign(attacked.begin(), attacked.end());
  std::set<int> boundary;
  for (int bi = 0; bi < grid.n_branches(); ++bi) {
    const Branch& br = grid.branches[bi];
    if (!br.on) continue;
    bool f_in = attacked.count(br.from) > 0;
    bool t_in = attacked.count(br.to) > 0;
    if (f_in != t_in) {
      region.C.push_back(bi);
      boundary.insert(f_in ? br.to : br.from);
    }
  }
  region.B.assign(boundary.begin(), boundary.end());
  region.weights = Vec::Ones(static_cast<int>(region.A.size()));
  return region;
}

PowerGrid reduced_grid(const PowerGrid& grid, const std::vector<bool>& keep_branch) {
  PowerGrid g = grid;
  for (size_t i = 0; i < g.branches.size(); ++i)
    if (i < keep_branch.size() && !keep_branch[i]) g.branches[i].on = false;
  g.Y = admittance_matrix(g);
  g.W = coupling_weights(g, g.Y);
  return g;
}

Eigen::MatrixXi hop_distances(const PowerGrid& grid) {
  const int n = grid.n();
  Eigen::MatrixXi d = Eigen::MatrixXi::Constant(n, n, 99);
  std::vector<std::vector<int>> adj(static_cast<size_t>(n));
  for (const auto& br : grid.branches) {
    if (!br.on) continue;
    adj[static_cast<size_t>(br.from)].push_back(br.to);
    adj[static_cast<size_t>(br.to)].push_back(br.from);
  }
  for (int s = 0; s < n; ++s) {
    d(s, s) = 0;
    std::deque<int> q{s};
    while (!q.empty()) {
      int u = q.front();
      q.pop_front();
      for (int v : adj[static_cast<size_t>(u)]) {
        if (d(s, v) > d(s, u) + 1) {
          d(s, v) = d(s, u) + 1;
          q.push_back(v);
        }
      }
    }
  }
  return d;
}

}  // namespace ddia
