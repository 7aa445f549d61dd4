#pragma once

// CSV artifacts (first line "# format=<name>/<version>") and the binary
// trajectory snapshot.

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fhnopt/adjoint.hpp"
#include "fhnopt/forward.hpp"

namespace fhnopt {

inline constexpr int kCsvFormatVersion = 1;
inline constexpr std::uint32_t kSnapshotVersion = 1;

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::string& format, const std::vector<std::string>& header)
      : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw std::runtime_error("cannot write " + path.string());
    out_ << "# format=" << format << '/' << kCsvFormatVersion << '\n';
    for (std::size_t i = 0; i < header.size(); ++i) out_ << (i ? "," : "") << header[i];
    out_ << '\n';
    columns_ = header.size();
  }

  CsvWriter& cell(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return raw(buf);
  }
  CsvWriter& cell(long long x) { return raw(std::to_string(x)); }
  CsvWriter& cell(int x) { return raw(std::to_string(x)); }
  CsvWriter& cell(const std::string& x) { return raw(x); }
  CsvWriter& cells(const Field& f) {
    for (Eigen::Index i = 0; i < f.size(); ++i) cell(f(i));
    return *this;
  }
  void end_row() {
    if (in_row_ != columns_) {
      throw ContractError(path_.string() + ": row has " + std::to_string(in_row_) + " cells, header has " +
                          std::to_string(columns_));
    }
    out_ << '\n';
    in_row_ = 0;
  }
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  CsvWriter& raw(const std::string& s) {
    out_ << (in_row_ ? "," : "") << s;
    ++in_row_;
    return *this;
  }

  std::filesystem::path path_;
  std::ofstream out_;
  std::size_t columns_ = 0;
  std::size_t in_row_ = 0;
};

inline std::vector<std::string> field_columns(const std::string& prefix, Eigen::Index count) {
  std::vector<std::string> out;
  for (Eigen::Index i = 0; i < count; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

inline std::vector<std::string> state_header(const std::string& v, const std::string& w, Eigen::Index nodes) {
  std::vector<std::string> h{"time"};
  for (const auto& c : field_columns(v, nodes)) h.push_back(c);
  for (const auto& c : field_columns(w, nodes)) h.push_back(c);
  return h;
}

inline void write_states_csv(const std::filesystem::path& path, const std::string& format, const TimeGrid& t,
                             const std::vector<StateX>& states, const std::string& v = "v_",
                             const std::string& w = "w_") {
  const Eigen::Index G = states.empty() ? 0 : states.front().v.size();
  CsvWriter csv(path, format, state_header(v, w, G));
  for (std::size_t n = 0; n < states.size(); ++n) {
    csv.cell(t.time(static_cast<int>(n))).cells(states[n].v).cells(states[n].w).end_row();
  }
}

inline void write_trajectory_csv(const std::filesystem::path& path, const TimeGrid& t, const Trajectory& tr) {
  write_states_csv(path, "trajectory", t, tr.states);
}

inline void write_adjoint_csv(const std::filesystem::path& path, const TimeGrid& t, const std::vector<StateX>& p) {
  write_states_csv(path, "adjoint", t, p, "p_v_", "p_w_");
}

inline void write_control_csv(const std::filesystem::path& path, const TimeGrid& t, const ControlPath& u) {
  const Eigen::Index G = u.size() ? u[0].size() : 0;
  std::vector<std::string> header{"time"};
  for (const auto& c : field_columns("u_", G)) header.push_back(c);
  CsvWriter csv(path, "control", header);
  for (std::size_t n = 0; n < u.size(); ++n) csv.cell(t.time(static_cast<int>(n))).cells(u[n]).end_row();
}

// Binary snapshot: "FHNS", u32 version, u32 dimension, u32 points, f64
// length, f64 horizon, u32 steps, u64 seed, u64 path, u32 has_increments,
// then states (v then w per node) and optionally increments, all
// little-endian IEEE doubles.
struct Snapshot {
  int dimension = 1;
  int points = 0;
  double length = 1.0;
  TimeGrid time;
  Trajectory trajectory;
};

namespace detail {
template <typename T>
void put(std::ostream& os, T x) {
  os.write(reinterpret_cast<const char*>(&x), sizeof x);
}
template <typename T>
T get(std::istream& is) {
  T x{};
  if (!is.read(reinterpret_cast<char*>(&x), sizeof x)) throw std::runtime_error("snapshot truncated");
  return x;
}
inline void put_field(std::ostream& os, const Field& f) {
  os.write(reinterpret_cast<const char*>(f.data()), static_cast<std::streamsize>(sizeof(double) * f.size()));
}
inline Field get_field(std::istream& is, Eigen::Index n) {
  Field f(n);
  if (!is.read(reinterpret_cast<char*>(f.data()), static_cast<std::streamsize>(sizeof(double) * n))) {
    throw std::runtime_error("snapshot truncated");
  }
  return f;
}
}  // namespace detail

inline void write_snapshot(const std::filesystem::path& path, const Grid& g, const TimeGrid& t, const Trajectory& tr) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.write("FHNS", 4);
  detail::put<std::uint32_t>(os, kSnapshotVersion);
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(g.dimension()));
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(g.points()));
  detail::put<double>(os, g.length());
  detail::put<double>(os, t.horizon);
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.steps));
  detail::put<std::uint64_t>(os, tr.seed);
  detail::put<std::uint64_t>(os, tr.path);
  detail::put<std::uint32_t>(os, tr.increments.empty() ? 0u : 1u);
  for (const auto& x : tr.states) {
    detail::put_field(os, x.v);
    detail::put_field(os, x.w);
  }
  for (const auto& dw : tr.increments) {
    detail::put_field(os, dw.dbeta1);
    detail::put_field(os, dw.dbeta2);
  }
}

inline Snapshot read_snapshot(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "FHNS", 4) != 0) throw std::runtime_error("not a snapshot file");
  if (detail::get<std::uint32_t>(is) != kSnapshotVersion) throw std::runtime_error("unsupported snapshot version");
  Snapshot s;
  s.dimension = static_cast<int>(detail::get<std::uint32_t>(is));
  s.points = static_cast<int>(detail::get<std::uint32_t>(is));
  s.length = detail::get<double>(is);
  s.time.horizon = detail::get<double>(is);
  s.time.steps = static_cast<int>(detail::get<std::uint32_t>(is));
  s.trajectory.seed = detail::get<std::uint64_t>(is);
  s.trajectory.path = detail::get<std::uint64_t>(is);
  const bool with_inc = detail::get<std::uint32_t>(is) != 0;
  const Grid g = Grid::make(s.dimension, s.points, s.length);
  for (int n = 0; n <= s.time.steps; ++n) {
    Field v = detail::get_field(is, g.size());
    Field w = detail::get_field(is, g.size());
    s.trajectory.states.push_back({std::move(v), std::move(w)});
  }
  if (with_inc) {
    for (int n = 0; n < s.time.steps; ++n) {
      Field b1 = detail::get_field(is, g.size());
      Field b2 = detail::get_field(is, g.size());
      s.trajectory.increments.push_back({std::move(b1), std::move(b2)});
    }
  }
  return s;
}

}  // namespace fhnopt
