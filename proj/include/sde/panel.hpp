#pragma once

#include <Eigen/Core>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sde/grid.hpp"

namespace sde {

// One person-year row of the input panel. person_id is opaque.
struct PersonYear {
  std::string person_id;
  int year = 0;
  int age = 0;
  std::optional<double> income;
  std::optional<double> housing_cost;
  std::optional<int> has;  // housing affordability stress indicator
  std::optional<double> mh; // mental health score, 0..100
};

// Housing affordability stress: housing costs at or above 30% of a gross
// income that is at or below the 40th income percentile for that year.
// Returns nullopt (record unusable) when the inputs are missing or invalid.
std::optional<int> derive_has(const PersonYear& rec, double income_p40);

enum class Direction { entry, exit };

// State transition of one person between two consecutive calendar years,
// attributed to the age and year of the second observation.
struct TransitionRecord {
  DomainCell cell;
  int prev_state = 0;
  int next_state = 0;
  bool event() const { return next_state != prev_state; }
};

// Year-on-year mental health change with its regression covariates. exposed
// is the stress indicator measured at the first of the two years.
struct DiffRecord {
  DomainCell cell;
  double y_prev = 0.0;
  double dy = 0.0;
  int exposed = 0;
};

// Per-cell binomial sufficient statistics: trials n and events k.
struct CellCounts {
  DomainGrid grid;
  Eigen::ArrayXi n;
  Eigen::ArrayXi k;

  int n_populated() const { return static_cast<int>((n > 0).count()); }
  long total_n() const { return n.cast<long>().sum(); }
  long total_k() const { return k.cast<long>().sum(); }
};

// Exclusion tally filled during extraction, reported by the ingest command.
struct IngestReport {
  long records_read = 0;
  long has_derived = 0;
  long bad_rows = 0;             // rows outside hard validity bounds
  long out_of_grid = 0;          // pair endpoints outside the grid
  long gap_pairs = 0;            // consecutive rows more than one year apart
  long missing_state_pairs = 0;  // has absent on either side of a pair
  long not_at_risk = 0;          // pairs in the wrong starting state
  long transition_records = 0;
  long missing_mh_pairs = 0;     // mh or exposure absent for a diff pair
  long diff_records = 0;

  std::vector<std::pair<std::string, long>> rows() const;
};

// Pairs consecutive observations of each person and keeps those at risk for
// the requested transition: exit pairs start in state 1, entry pairs in
// state 0. Throws DataError on duplicate (person_id, year) rows.
std::vector<TransitionRecord> extract_transitions(const std::vector<PersonYear>& panel,
                                                  Direction dir, const DomainGrid& grid,
                                                  IngestReport* report = nullptr);

// Year-on-year mental health differences for consecutive pairs with both mh
// values and the lagged stress indicator present.
std::vector<DiffRecord> extract_diffs(const std::vector<PersonYear>& panel,
                                      const DomainGrid& grid, IngestReport* report = nullptr);

CellCounts aggregate(const std::vector<TransitionRecord>& records, const DomainGrid& grid);

// Panel CSV layout: person_id,year,age,income,housing_cost,has,mh with empty
// fields for missing values. When has is empty and a threshold table is
// given, it is derived from income and housing cost.
std::vector<PersonYear> read_panel_csv(const std::string& path);
void write_panel_csv(const std::string& path, const std::vector<PersonYear>& panel);

// year,income_p40
std::map<int, double> read_thresholds_csv(const std::string& path);

// Fills missing has indicators from the threshold table; counts derivations
// and rows that stay unusable in the report.
void apply_thresholds(std::vector<PersonYear>& panel, const std::map<int, double>& thresholds,
                      IngestReport* report = nullptr);

}  // namespace sde
