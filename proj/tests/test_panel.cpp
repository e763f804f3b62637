#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "sde/csv.hpp"
#include "sde/errors.hpp"
#include "sde/panel.hpp"

using namespace sde;

namespace {

PersonYear row(std::string id, int year, int age, std::optional<int> has,
               std::optional<double> mh = std::nullopt) {
  PersonYear r;
  r.person_id = std::move(id);
  r.year = year;
  r.age = age;
  r.has = has;
  r.mh = mh;
  return r;
}

std::string tmp_file(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("30/40 rule") {
  PersonYear r;
  r.income = 1000.0;
  r.housing_cost = 300.0;
  CHECK(derive_has(r, 1200.0) == 1);   // at the 30% boundary, below p40
  CHECK(derive_has(r, 999.0) == 0);    // income above the p40 threshold
  r.housing_cost = 299.99;
  CHECK(derive_has(r, 1200.0) == 0);   // cost share below 30%
  r.housing_cost.reset();
  CHECK_FALSE(derive_has(r, 1200.0).has_value());
  r.housing_cost = 100.0;
  r.income = 0.0;
  CHECK_FALSE(derive_has(r, 1200.0).has_value());
}

TEST_CASE("transition pairing attributes to the destination cell") {
  DomainGrid grid{30, 35, 2001, 2005};
  std::vector<PersonYear> panel = {
      row("a", 2001, 30, 1), row("a", 2002, 31, 0),  // exit event at (31, 2002)
      row("b", 2001, 30, 1), row("b", 2002, 31, 1),  // exit non-event
      row("c", 2001, 30, 0), row("c", 2002, 31, 1),  // entry event, not at risk for exit
  };
  IngestReport rep;
  auto exits = extract_transitions(panel, Direction::exit, grid, &rep);
  REQUIRE(exits.size() == 2);
  CHECK(exits[0].cell.age == 31);
  CHECK(exits[0].cell.year == 2002);
  CHECK(exits[0].event());
  CHECK_FALSE(exits[1].event());
  CHECK(rep.not_at_risk == 1);
  CHECK(rep.transition_records == 2);

  auto entries = extract_transitions(panel, Direction::entry, grid);
  REQUIRE(entries.size() == 1);
  CHECK(entries[0].event());

  CellCounts counts = aggregate(exits, grid);
  CHECK(counts.total_n() == 2);
  CHECK(counts.total_k() == 1);
  CHECK(counts.n[grid.index_of(31, 2002)] == 2);
  CHECK(counts.n_populated() == 1);
}

TEST_CASE("pairs with gaps, missing state, or out-of-grid endpoints are dropped") {
  DomainGrid grid{30, 32, 2001, 2004};
  std::vector<PersonYear> panel = {
      row("a", 2001, 30, 1), row("a", 2003, 32, 0),           // gap
      row("b", 2001, 30, 1), row("b", 2002, 31, std::nullopt),  // missing state
      row("c", 2003, 32, 1), row("c", 2004, 33, 0),            // destination age off grid
  };
  IngestReport rep;
  auto records = extract_transitions(panel, Direction::exit, grid, &rep);
  CHECK(records.empty());
  CHECK(rep.gap_pairs == 1);
  CHECK(rep.missing_state_pairs == 1);
  CHECK(rep.out_of_grid == 1);
}

TEST_CASE("duplicate person-year rows are an error") {
  DomainGrid grid{30, 32, 2001, 2004};
  std::vector<PersonYear> panel = {row("a", 2001, 30, 1), row("a", 2001, 30, 0)};
  CHECK_THROWS_AS(extract_transitions(panel, Direction::exit, grid), DataError);
}

TEST_CASE("mh differences carry the lagged exposure") {
  DomainGrid grid{30, 35, 2001, 2005};
  std::vector<PersonYear> panel = {
      row("a", 2001, 30, 1, 80.0), row("a", 2002, 31, 0, 74.0),
      row("b", 2001, 30, 0, 60.0), row("b", 2002, 31, 1, 65.5),
      row("c", 2001, 30, 1, 50.0), row("c", 2002, 31, 1, std::nullopt),  // missing mh
  };
  IngestReport rep;
  auto diffs = extract_diffs(panel, grid, &rep);
  REQUIRE(diffs.size() == 2);
  CHECK(diffs[0].y_prev == 80.0);
  CHECK(diffs[0].dy == doctest::Approx(-6.0));
  CHECK(diffs[0].exposed == 1);  // exposure measured at the first year
  CHECK(diffs[1].exposed == 0);
  CHECK(rep.missing_mh_pairs == 1);
}

TEST_CASE("panel csv round-trips byte for byte") {
  std::vector<PersonYear> panel = {row("p1", 2001, 40, 1, 62.5), row("p1", 2002, 41, 0)};
  panel[0].income = 1234.56;
  panel[0].housing_cost = 410.0;

  std::string p1 = tmp_file("sde_panel_a.csv");
  std::string p2 = tmp_file("sde_panel_b.csv");
  write_panel_csv(p1, panel);
  auto back = read_panel_csv(p1);
  REQUIRE(back.size() == 2);
  CHECK(back[0].income == doctest::Approx(1234.56));
  CHECK(back[0].has == 1);
  CHECK_FALSE(back[1].mh.has_value());
  write_panel_csv(p2, back);
  CHECK(file_checksum(p1) == file_checksum(p2));
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("bad panel files are rejected with context") {
  std::string p = tmp_file("sde_panel_bad.csv");
  {
    FileWriter w(p);
    w.writeln("person_id,year,age,income,housing_cost,has,mh");
    w.writeln("a,2001,30,,,2,");  // has out of range
  }
  CHECK_THROWS_AS(read_panel_csv(p), DataError);
  std::remove(p.c_str());
  CHECK_THROWS_AS(read_panel_csv(tmp_file("sde_no_such_file.csv")), DataError);
}

TEST_CASE("thresholds fill only missing stress flags") {
  std::string p = tmp_file("sde_thresh.csv");
  {
    FileWriter w(p);
    w.writeln("year,income_p40");
    w.writeln("2001,1000");
  }
  auto th = read_thresholds_csv(p);
  std::remove(p.c_str());
  REQUIRE(th.size() == 1);

  std::vector<PersonYear> panel = {row("a", 2001, 30, 0), row("b", 2001, 30, std::nullopt),
                                   row("c", 2002, 30, std::nullopt)};
  panel[1].income = 900.0;
  panel[1].housing_cost = 300.0;
  panel[2].income = 900.0;
  panel[2].housing_cost = 300.0;
  IngestReport rep;
  apply_thresholds(panel, th, &rep);
  CHECK(panel[0].has == 0);   // untouched
  CHECK(panel[1].has == 1);   // derived
  CHECK_FALSE(panel[2].has.has_value());  // no threshold for 2002
  CHECK(rep.has_derived == 1);
}
