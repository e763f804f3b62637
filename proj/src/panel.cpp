#include "sde/panel.hpp"

#include <algorithm>
#include <numeric>

#include "sde/csv.hpp"
#include "sde/errors.hpp"

namespace sde {

std::optional<int> derive_has(const PersonYear& rec, double income_p40) {
  if (!rec.income || !rec.housing_cost) return std::nullopt;
  if (*rec.income <= 0.0 || *rec.housing_cost < 0.0) return std::nullopt;
  bool low_income = *rec.income <= income_p40;
  bool high_cost = *rec.housing_cost >= 0.30 * *rec.income;
  return (low_income && high_cost) ? 1 : 0;
}

namespace {

// Indices of panel rows sorted by (person_id, year); throws on duplicates.
std::vector<std::size_t> sorted_order(const std::vector<PersonYear>& panel) {
  std::vector<std::size_t> order(panel.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (panel[a].person_id != panel[b].person_id) return panel[a].person_id < panel[b].person_id;
    return panel[a].year < panel[b].year;
  });
  for (std::size_t i = 1; i < order.size(); ++i) {
    const auto& a = panel[order[i - 1]];
    const auto& b = panel[order[i]];
    if (a.person_id == b.person_id && a.year == b.year)
      throw DataError("duplicate panel row for person " + a.person_id + " year " +
                      std::to_string(a.year));
  }
  return order;
}

bool valid_row(const PersonYear& r) {
  if (r.mh && (*r.mh < 0.0 || *r.mh > 100.0)) return false;
  if (r.has && (*r.has != 0 && *r.has != 1)) return false;
  return true;
}

}  // namespace

std::vector<TransitionRecord> extract_transitions(const std::vector<PersonYear>& panel,
                                                  Direction dir, const DomainGrid& grid,
                                                  IngestReport* report) {
  grid.validate();
  IngestReport local;
  IngestReport& rep = report ? *report : local;
  rep.records_read = static_cast<long>(panel.size());
  const int at_risk_state = (dir == Direction::exit) ? 1 : 0;

  std::vector<TransitionRecord> out;
  auto order = sorted_order(panel);
  for (std::size_t i = 1; i < order.size(); ++i) {
    const PersonYear& prev = panel[order[i - 1]];
    const PersonYear& curr = panel[order[i]];
    if (prev.person_id != curr.person_id) continue;
    if (!valid_row(prev) || !valid_row(curr)) {
      ++rep.bad_rows;
      continue;
    }
    if (curr.year != prev.year + 1) {
      ++rep.gap_pairs;
      continue;
    }
    if (!grid.contains(curr.age, curr.year)) {
      ++rep.out_of_grid;
      continue;
    }
    if (!prev.has || !curr.has) {
      ++rep.missing_state_pairs;
      continue;
    }
    if (*prev.has != at_risk_state) {
      ++rep.not_at_risk;
      continue;
    }
    out.push_back({{curr.age, curr.year}, *prev.has, *curr.has});
  }
  rep.transition_records = static_cast<long>(out.size());
  return out;
}

std::vector<DiffRecord> extract_diffs(const std::vector<PersonYear>& panel, const DomainGrid& grid,
                                      IngestReport* report) {
  grid.validate();
  IngestReport local;
  IngestReport& rep = report ? *report : local;
  if (rep.records_read == 0) rep.records_read = static_cast<long>(panel.size());

  std::vector<DiffRecord> out;
  auto order = sorted_order(panel);
  for (std::size_t i = 1; i < order.size(); ++i) {
    const PersonYear& prev = panel[order[i - 1]];
    const PersonYear& curr = panel[order[i]];
    if (prev.person_id != curr.person_id) continue;
    if (!valid_row(prev) || !valid_row(curr)) {
      ++rep.bad_rows;
      continue;
    }
    if (curr.year != prev.year + 1) {
      ++rep.gap_pairs;
      continue;
    }
    if (!grid.contains(curr.age, curr.year)) {
      ++rep.out_of_grid;
      continue;
    }
    if (!prev.mh || !curr.mh || !prev.has) {
      ++rep.missing_mh_pairs;
      continue;
    }
    out.push_back({{curr.age, curr.year}, *prev.mh, *curr.mh - *prev.mh, *prev.has});
  }
  rep.diff_records = static_cast<long>(out.size());
  return out;
}

CellCounts aggregate(const std::vector<TransitionRecord>& records, const DomainGrid& grid) {
  grid.validate();
  CellCounts c;
  c.grid = grid;
  c.n = Eigen::ArrayXi::Zero(grid.n_cells());
  c.k = Eigen::ArrayXi::Zero(grid.n_cells());
  for (const auto& r : records) {
    if (!grid.contains(r.cell.age, r.cell.year))
      throw DataError("transition record outside the grid at age " + std::to_string(r.cell.age) +
                      " year " + std::to_string(r.cell.year));
    int idx = grid.index_of(r.cell.age, r.cell.year);
    ++c.n[idx];
    if (r.event()) ++c.k[idx];
  }
  return c;
}

std::vector<std::pair<std::string, long>> IngestReport::rows() const {
  return {
      {"records_read", records_read},
      {"has_derived", has_derived},
      {"bad_rows", bad_rows},
      {"out_of_grid_pairs", out_of_grid},
      {"gap_pairs", gap_pairs},
      {"missing_state_pairs", missing_state_pairs},
      {"not_at_risk_pairs", not_at_risk},
      {"transition_records", transition_records},
      {"missing_mh_pairs", missing_mh_pairs},
      {"diff_records", diff_records},
  };
}

std::vector<PersonYear> read_panel_csv(const std::string& path) {
  auto lines = read_lines(path);
  if (lines.empty()) throw DataError(path + ": empty panel file");
  const std::string header = "person_id,year,age,income,housing_cost,has,mh";
  if (lines[0] != header)
    throw DataError(path + ": expected header '" + header + "', got '" + lines[0] + "'");
  std::vector<PersonYear> panel;
  panel.reserve(lines.size() - 1);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    auto f = split_csv_line(lines[i]);
    std::string ctx = path + ":" + std::to_string(i + 1);
    if (f.size() != 7) throw DataError(ctx + ": expected 7 fields, got " + std::to_string(f.size()));
    PersonYear r;
    r.person_id = f[0];
    if (r.person_id.empty()) throw DataError(ctx + ": empty person_id");
    r.year = parse_int_field(f[1], ctx);
    r.age = parse_int_field(f[2], ctx);
    r.income = parse_optional_double(f[3], ctx);
    r.housing_cost = parse_optional_double(f[4], ctx);
    r.has = parse_optional_int(f[5], ctx);
    r.mh = parse_optional_double(f[6], ctx);
    if (r.has && *r.has != 0 && *r.has != 1) throw DataError(ctx + ": has must be 0 or 1");
    panel.push_back(std::move(r));
  }
  return panel;
}

void write_panel_csv(const std::string& path, const std::vector<PersonYear>& panel) {
  FileWriter w(path);
  w.writeln("person_id,year,age,income,housing_cost,has,mh");
  std::string line;
  for (const auto& r : panel) {
    line.clear();
    line += r.person_id;
    line += ',';
    line += std::to_string(r.year);
    line += ',';
    line += std::to_string(r.age);
    line += ',';
    if (r.income) line += format_double(*r.income);
    line += ',';
    if (r.housing_cost) line += format_double(*r.housing_cost);
    line += ',';
    if (r.has) line += std::to_string(*r.has);
    line += ',';
    if (r.mh) line += format_double(*r.mh);
    w.writeln(line);
  }
}

std::map<int, double> read_thresholds_csv(const std::string& path) {
  auto lines = read_lines(path);
  if (lines.empty() || lines[0] != "year,income_p40")
    throw DataError(path + ": expected header 'year,income_p40'");
  std::map<int, double> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    auto f = split_csv_line(lines[i]);
    std::string ctx = path + ":" + std::to_string(i + 1);
    if (f.size() != 2) throw DataError(ctx + ": expected 2 fields");
    int year = parse_int_field(f[0], ctx);
    double p40 = parse_double_field(f[1], ctx);
    if (!out.emplace(year, p40).second) throw DataError(ctx + ": duplicate year");
  }
  return out;
}

void apply_thresholds(std::vector<PersonYear>& panel, const std::map<int, double>& thresholds,
                      IngestReport* report) {
  for (auto& r : panel) {
    if (r.has) continue;
    auto it = thresholds.find(r.year);
    if (it == thresholds.end()) continue;
    auto derived = derive_has(r, it->second);
    if (derived) {
      r.has = derived;
      if (report) ++report->has_derived;
    }
  }
}

}  // namespace sde
