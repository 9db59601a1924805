#include "tsm/instance.hpp"

#include <gtest/gtest.h>

#include "test_support.hpp"

using tsm::testing::desk_instance;
using tsm::testing::TempDir;
using tsm::testing::write_file;

namespace {

const char* kDeskJson = R"({
  "num_tests": 3,
  "num_stmts": 3,
  "num_faults": 4,
  "test_ids": ["t1", "t2", "t3"],
  "stmt_edges": [[0,0],[1,1],[1,2],[2,0],[2,2]],
  "fault_edges": [[0,3],[1,0],[1,1],[1,2],[2,0],[2,1],[2,2]]
})";

TEST(Instance, LoadsDeskFile) {
  TempDir dir;
  const auto path = write_file(dir.file("desk.json"), kDeskJson);
  tsm::TsmInstance inst = tsm::load_instance(path);
  const tsm::TsmInstance want = desk_instance();
  EXPECT_EQ(inst.test_ids, want.test_ids);
  EXPECT_EQ(inst.num_stmts, want.num_stmts);
  EXPECT_EQ(inst.num_faults, want.num_faults);
  EXPECT_EQ(inst.stmt, want.stmt);
  EXPECT_EQ(inst.fault, want.fault);
}

TEST(Instance, RoundTripIsByteStable) {
  const tsm::TsmInstance inst = desk_instance();
  const std::string once = tsm::serialize_instance(inst);
  const tsm::TsmInstance reloaded = tsm::parse_instance(nlohmann::json::parse(once), "mem");
  EXPECT_EQ(tsm::serialize_instance(reloaded), once);
  EXPECT_EQ(reloaded.stmt, inst.stmt);
  EXPECT_EQ(reloaded.fault, inst.fault);
}

TEST(Instance, RejectsUnknownKey) {
  auto doc = nlohmann::json::parse(kDeskJson);
  doc["extra"] = 1;
  EXPECT_THROW(tsm::parse_instance(doc, "mem"), tsm::ParseError);
}

TEST(Instance, RejectsMissingKey) {
  auto doc = nlohmann::json::parse(kDeskJson);
  doc.erase("fault_edges");
  EXPECT_THROW(tsm::parse_instance(doc, "mem"), tsm::ParseError);
}

TEST(Instance, RejectsDuplicateEdge) {
  auto doc = nlohmann::json::parse(kDeskJson);
  doc["stmt_edges"].push_back({0, 0});
  EXPECT_THROW(tsm::parse_instance(doc, "mem"), tsm::ValidationError);
}

TEST(Instance, RejectsOutOfRangeIndices) {
  auto doc = nlohmann::json::parse(kDeskJson);
  doc["stmt_edges"].push_back({3, 0});
  EXPECT_THROW(tsm::parse_instance(doc, "mem"), tsm::ValidationError);
  doc = nlohmann::json::parse(kDeskJson);
  doc["fault_edges"].push_back({0, 4});
  EXPECT_THROW(tsm::parse_instance(doc, "mem"), tsm::ValidationError);
}

TEST(Instance, RejectsDuplicateTestIds) {
  auto doc = nlohmann::json::parse(kDeskJson);
  doc["test_ids"] = {"t1", "t1", "t3"};
  EXPECT_THROW(tsm::parse_instance(doc, "mem"), tsm::ValidationError);
}

TEST(Instance, ZeroColumnIsInfeasible) {
  auto doc = nlohmann::json::parse(kDeskJson);
  doc["fault_edges"] = {{1, 0}, {1, 1}, {1, 2}};  // f4 loses its only edge
  try {
    tsm::parse_instance(doc, "mem");
    FAIL() << "expected InfeasibleInstanceError";
  } catch (const tsm::InfeasibleInstanceError& e) {
    EXPECT_NE(std::string(e.what()).find("fault column 3"), std::string::npos);
  }
}

TEST(Instance, MalformedJsonIsParseError) {
  TempDir dir;
  const auto path = write_file(dir.file("bad.json"), "{not json");
  EXPECT_THROW(tsm::load_instance(path), tsm::ParseError);
  EXPECT_THROW(tsm::load_instance((dir.path() / "missing.json").string()), tsm::ParseError);
}

TEST(Instance, ValidateReportsWarnings) {
  tsm::TsmInstance inst = desk_instance();
  inst.test_ids.push_back("t4");
  inst.stmt.insert(inst.stmt.end(), {0, 0, 0});
  inst.fault.insert(inst.fault.end(), {0, 0, 0, 0});
  tsm::ValidationReport rep = tsm::validate(inst);
  EXPECT_TRUE(rep.ok);
  ASSERT_EQ(rep.zero_test_rows.size(), 1u);
  EXPECT_EQ(rep.zero_test_rows[0], 3u);
  EXPECT_FALSE(rep.warnings.empty());
}

TEST(Instance, ValidateFlagsDuplicateRows) {
  tsm::TsmInstance inst = desk_instance();
  inst.test_ids.push_back("t2_copy");
  inst.stmt.insert(inst.stmt.end(), {0, 1, 1});
  inst.fault.insert(inst.fault.end(), {1, 1, 1, 0});
  tsm::ValidationReport rep = tsm::validate(inst);
  EXPECT_TRUE(rep.ok);
  ASSERT_EQ(rep.duplicate_rows.size(), 1u);
  EXPECT_EQ(rep.duplicate_rows[0].first, 1u);
  EXPECT_EQ(rep.duplicate_rows[0].second, 3u);
}

TEST(Instance, ValidateDensities) {
  tsm::ValidationReport rep = tsm::validate(desk_instance());
  EXPECT_TRUE(rep.ok);
  EXPECT_DOUBLE_EQ(rep.stmt_density, 5.0 / 9.0);
  EXPECT_DOUBLE_EQ(rep.fault_density, 7.0 / 12.0);
}

TEST(Instance, SyntheticShapesAndFeasibility) {
  tsm::TsmInstance inst = tsm::generate_synthetic(10, 20, 5, 0.3, 7);
  EXPECT_EQ(inst.num_tests(), 10u);
  EXPECT_EQ(inst.num_stmts, 20u);
  EXPECT_EQ(inst.num_faults, 5u);
  tsm::ValidationReport rep = tsm::validate(inst);
  EXPECT_TRUE(rep.ok) << (rep.errors.empty() ? "" : rep.errors[0]);
  EXPECT_TRUE(rep.zero_stmt_columns.empty());
  EXPECT_TRUE(rep.zero_fault_columns.empty());
}

TEST(Instance, SyntheticIsSeedDeterministic) {
  tsm::TsmInstance a = tsm::generate_synthetic(12, 30, 6, 0.2, 42);
  tsm::TsmInstance b = tsm::generate_synthetic(12, 30, 6, 0.2, 42);
  tsm::TsmInstance c = tsm::generate_synthetic(12, 30, 6, 0.2, 43);
  EXPECT_EQ(a.stmt, b.stmt);
  EXPECT_EQ(a.fault, b.fault);
  EXPECT_TRUE(a.stmt != c.stmt || a.fault != c.fault);
}

TEST(Instance, SyntheticRejectsBadParameters) {
  EXPECT_THROW(tsm::generate_synthetic(0, 5, 5, 0.5, 0), tsm::ValidationError);
  EXPECT_THROW(tsm::generate_synthetic(5, 5, 5, 0.0, 0), tsm::ValidationError);
  EXPECT_THROW(tsm::generate_synthetic(5, 5, 5, 1.5, 0), tsm::ValidationError);
}

TEST(Instance, SaveLoadRoundTripOnDisk) {
  TempDir dir;
  tsm::TsmInstance inst = tsm::generate_synthetic(8, 15, 4, 0.35, 3);
  const auto path = dir.file("synth.json").string();
  tsm::save_instance(inst, path);
  tsm::TsmInstance again = tsm::load_instance(path);
  EXPECT_EQ(again.stmt, inst.stmt);
  EXPECT_EQ(again.fault, inst.fault);
  EXPECT_EQ(again.test_ids, inst.test_ids);
}

}  // namespace
