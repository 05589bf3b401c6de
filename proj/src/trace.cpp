#include "adadmm/trace.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

namespace adadmm {

bool IterationRecord::in_arrivals(int i) const {
  return std::binary_search(arrivals.begin(), arrivals.end(), i);
}

double Trace::delta(long k) const {
  if (!f_star) throw ContractError("trace has no reference optimum; Delta_k is undefined");
  return lagrangian(k) - *f_star;
}

std::vector<TraceRow> trace_rows(const Trace& trace) {
  std::vector<TraceRow> rows;
  rows.reserve(trace.records.size() + 1);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  TraceRow first;
  first.objective = trace.objective0;
  first.lagrangian = trace.lagrangian0;
  first.delta = trace.f_star ? trace.lagrangian0 - *trace.f_star : nan;
  first.consensus_err = trace.consensus0;
  rows.push_back(first);
  for (const auto& r : trace.records) {
    TraceRow row;
    row.k = r.k + 1;
    row.objective = r.objective;
    row.lagrangian = r.lagrangian;
    row.delta = trace.f_star ? r.lagrangian - *trace.f_star : nan;
    row.consensus_err = r.consensus_err;
    row.arrivals = static_cast<int>(r.arrivals.size());
    row.time = r.time;
    row.master_compute = r.master_compute;
    row.master_wait = r.master_wait;
    rows.push_back(row);
  }
  return rows;
}

void write_trace_csv(std::ostream& out, const Trace& trace) {
  out << kTraceCsvHeader << '\n';
  char buf[512];
  for (const auto& r : trace_rows(trace)) {
    std::snprintf(buf, sizeof buf, "%ld,%.17g,%.17g,%.17g,%.17g,%d,%.17g,%.17g,%.17g\n", r.k,
                  r.objective, r.lagrangian, r.delta, r.consensus_err, r.arrivals, r.time,
                  r.master_compute, r.master_wait);
    out << buf;
  }
}

std::vector<TraceRow> read_trace_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kTraceCsvHeader)
    throw ContractError("trace csv: unexpected header");
  std::vector<TraceRow> rows;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 9)
      throw ContractError("trace csv: line " + std::to_string(line_no) + " has " +
                          std::to_string(cells.size()) + " columns");
    try {
      TraceRow r;
      r.k = std::stol(cells[0]);
      r.objective = std::stod(cells[1]);
      r.lagrangian = std::stod(cells[2]);
      r.delta = std::stod(cells[3]);
      r.consensus_err = std::stod(cells[4]);
      r.arrivals = std::stoi(cells[5]);
      r.time = std::stod(cells[6]);
      r.master_compute = std::stod(cells[7]);
      r.master_wait = std::stod(cells[8]);
      rows.push_back(r);
    } catch (const std::logic_error&) {
      throw ContractError("trace csv: malformed number on line " + std::to_string(line_no));
    }
  }
  return rows;
}

}  // namespace adadmm
