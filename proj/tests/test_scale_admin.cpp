#include <doctest.h>

#include <set>

#include "fixture_backend.hpp"
#include "synthpsych/pipeline.hpp"
#include "synthpsych/scale_admin.hpp"
#include "test_util.hpp"

using namespace synthpsych;
using namespace synthpsych::scale;
using testutil::error_code_of;

namespace {

const ItemBank& bank() {
  static const ItemBank b = load_item_bank(pipeline::default_item_bank());
  return b;
}

}  // namespace

TEST_CASE("item map follows the published subscale keys") {
  const std::map<Subscale, std::array<int, 4>> expected = {
      {Subscale::IMTK, {2, 9, 16, 23}},  {Subscale::IMTA, {6, 13, 20, 27}}, {Subscale::IMES, {4, 11, 18, 25}},
      {Subscale::EMID, {3, 10, 17, 24}}, {Subscale::EMIN, {7, 14, 21, 28}}, {Subscale::EMEX, {1, 8, 15, 22}},
      {Subscale::AMOT, {5, 12, 19, 26}}};
  std::set<int> all;
  for (const auto& [s, items] : expected) {
    CHECK(subscale_items(s) == items);
    all.insert(items.begin(), items.end());
  }
  CHECK(all.size() == 28);
  CHECK(*all.begin() == 1);
  CHECK(*all.rbegin() == 28);
}

TEST_CASE("shipped item bank is valid") {
  CHECK(bank().items.size() == 28);
  CHECK(bank().scale_points == 7);
  for (const auto& item : bank().items) {
    CHECK(item.subscale == kAmsItemMap[static_cast<std::size_t>(item.index - 1)]);
  }
  CHECK(parse_subscale("AMOT") == Subscale::AMOT);
}

TEST_CASE("broken banks are rejected") {
  auto j = nlohmann::json::parse(testutil::slurp(pipeline::default_item_bank()));
  auto broken = j;
  broken["items"].erase(broken["items"].begin());
  CHECK(error_code_of([&] { parse_item_bank(broken.dump()); }) == ErrorCode::BankInvalid);
  broken = j;
  broken["items"][0]["subscale"] = "IMTK";
  CHECK(error_code_of([&] { parse_item_bank(broken.dump()); }) == ErrorCode::BankInvalid);
  broken = j;
  broken["items"][3]["text"] = "";
  CHECK(error_code_of([&] { parse_item_bank(broken.dump()); }) == ErrorCode::BankInvalid);
  CHECK(error_code_of([] { parse_item_bank("{not json"); }) == ErrorCode::BankInvalid);
}

TEST_CASE("response prompt matches the golden file") {
  const persona::Persona p{1, 20, "Female",
                           "Loves collaborative learning; often uses concept maps to organize her thoughts; tends to "
                           "get anxious during exams."};
  const std::string prompt = build_response_prompt(p, bank());
  CHECK(prompt == testutil::slurp(std::string(SYNTHPSYCH_TEST_DIR) + "/golden/response_prompt_example.txt"));
  CHECK(prompt.find("Please return exactly 28 integers separated only by commas") != std::string::npos);
  CHECK(error_code_of([&] { build_response_prompt({2, 20, "Male", "  "}, bank()); }) == ErrorCode::InvalidInput);
}

TEST_CASE("response line parsing") {
  const auto rv = parse_response_line("4,5,6,7,1,2,3,4,5,6,7,1,2,3,4,5,6,7,1,2,3,4,5,6,7,1,2,3\n", 9);
  CHECK(rv.persona_id == 9);
  CHECK(rv.values[0] == 4);
  CHECK(rv.values[27] == 3);
  CHECK_NOTHROW(parse_response_line("1, 2, 3, 4, 5, 6, 7, 1, 2, 3, 4, 5, 6, 7, 1, 2, 3, 4, 5, 6, 7, 1, 2, 3, 4, 5, 6, 7", 1));

  CHECK(error_code_of([] { parse_response_line("1,2,3", 1); }) == ErrorCode::LengthMismatch);
  CHECK(error_code_of([] { parse_response_line("1,2,3,4,5,6,7,1,2,3,4,5,6,7,1,2,3,4,5,6,7,1,2,3,4,5,6,7,1", 1); }) ==
        ErrorCode::LengthMismatch);
  CHECK(error_code_of([] { parse_response_line("1,2,3,4,5,6,7,1,2,3,4,5,6,7,1,2,3,4,5,6,7,1,2,3,4,5,6,x", 1); }) ==
        ErrorCode::NotAnInteger);
  CHECK(error_code_of([] { parse_response_line("Answers: 1,2,3,4,5,6,7,1,2,3,4,5,6,7,1,2,3,4,5,6,7,1,2,3,4,5,6,7", 1); }) ==
        ErrorCode::NotAnInteger);
  CHECK(error_code_of([] { parse_response_line("1,2,3,4,5,6,7,1,2,3,4,5,6,7,1,2,3,4,5,6,7,1,2,3,4,5,6,8", 1); }) ==
        ErrorCode::ValueOutOfRange);
  CHECK(error_code_of([] { parse_response_line("0,2,3,4,5,6,7,1,2,3,4,5,6,7,1,2,3,4,5,6,7,1,2,3,4,5,6,7", 1); }) ==
        ErrorCode::ValueOutOfRange);
}

TEST_CASE("subscale scores are plain item means within 1..7") {
  ResponseVector rv;
  rv.persona_id = 3;
  for (int i = 0; i < kItemCount; ++i) rv.values[static_cast<std::size_t>(i)] = 1 + (i * 5) % 7;
  const auto scores = subscale_scores(rv, bank());
  for (Subscale s : kSubscales) {
    double sum = 0.0;
    for (int item : subscale_items(s)) sum += rv.values[static_cast<std::size_t>(item - 1)];
    CHECK(scores[s] == doctest::Approx(sum / 4.0).epsilon(1e-15));
    CHECK(scores[s] >= 1.0);
    CHECK(scores[s] <= 7.0);
  }
}

TEST_CASE("administer: deterministic at temperature 0, drops after the budget") {
  fixture::ensure_test_credential();
  testutil::TempDir dir("administer");
  std::vector<persona::Persona> cohort;
  for (int id = 1; id <= 12; ++id) cohort.push_back({id, 20, "Female", fixture::description_for(id)});

  auto backend = std::make_shared<fixture::ScriptedBackend>();
  backend->poison_persona(5);
  AdministerResult recorded;
  {
    transport::TranscriptStore store(transport::StoreMode::Record, dir / "store.jsonl");
    transport::Gateway gw({}, store, backend);
    recorded = administer(cohort, bank(), gw);
  }
  CHECK(recorded.matrix.n() == 11);
  REQUIRE(recorded.dropouts.size() == 1);
  CHECK(recorded.dropouts[0].persona_id == 5);
  CHECK(recorded.dropouts[0].attempts == 4);
  CHECK(recorded.requests == 11 + 4);
  for (std::size_t i = 1; i < recorded.matrix.rows.size(); ++i) {
    CHECK(recorded.matrix.rows[i - 1].persona_id < recorded.matrix.rows[i].persona_id);
  }

  transport::TranscriptStore store(transport::StoreMode::Replay, dir / "store.jsonl");
  transport::Gateway gw({}, store, nullptr);
  const auto replayed = administer(cohort, bank(), gw);
  CHECK(replayed.matrix.rows == recorded.matrix.rows);

  write_responses_csv(dir / "r.csv", replayed.matrix);
  CHECK(read_responses_csv(dir / "r.csv").rows == replayed.matrix.rows);
  CHECK(testutil::slurp(dir / "r.csv").rfind("persona_id,Q1,Q2,", 0) == 0);
}

TEST_CASE("response matrix validation") {
  ResponseMatrix m;
  ResponseVector a;
  a.persona_id = 1;
  a.values.fill(4);
  m.rows = {a, a};
  CHECK(error_code_of([&] { validate(m); }) == ErrorCode::InvalidInput);
  m.rows[1].persona_id = 2;
  m.rows[1].values[3] = 9;
  CHECK(error_code_of([&] { validate(m); }) == ErrorCode::InvalidInput);
}
