#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "synthpsych/persona_gen.hpp"
#include "synthpsych/transport.hpp"

namespace synthpsych::scale {

inline constexpr int kItemCount = 28;
inline constexpr int kScalePoints = 7;
inline constexpr int kSubscaleCount = 7;

enum class Subscale { IMTK, IMTA, IMES, EMID, EMIN, EMEX, AMOT };

inline constexpr std::array<Subscale, kSubscaleCount> kSubscales = {
    Subscale::IMTK, Subscale::IMTA, Subscale::IMES, Subscale::EMID,
    Subscale::EMIN, Subscale::EMEX, Subscale::AMOT};

std::string_view to_string(Subscale s);
Subscale parse_subscale(std::string_view label);
std::string_view long_name(Subscale s);

// Canonical AMS item -> subscale assignment; index 0 is item 1.
inline constexpr std::array<Subscale, kItemCount> kAmsItemMap = [] {
  using enum Subscale;
  return std::array<Subscale, kItemCount>{EMEX, IMTK, EMID, IMES, AMOT, IMTA, EMIN,   // 1-7
                                          EMEX, IMTK, EMID, IMES, AMOT, IMTA, EMIN,   // 8-14
                                          EMEX, IMTK, EMID, IMES, AMOT, IMTA, EMIN,   // 15-21
                                          EMEX, IMTK, EMID, IMES, AMOT, IMTA, EMIN};  // 22-28
}();

// 1-based item indices of a subscale, ascending.
std::array<int, 4> subscale_items(Subscale s);

struct Item {
  int index = 0;
  std::string text;
  Subscale subscale = Subscale::IMTK;
};

struct ItemBank {
  std::vector<Item> items;  // sorted by index
  int scale_points = kScalePoints;
  std::pair<std::string, std::string> anchors{"Does not correspond at all", "Corresponds exactly"};
  std::string stem;
};

ItemBank load_item_bank(const std::filesystem::path& path);
ItemBank parse_item_bank(std::string_view json_text);

std::string build_response_prompt(const persona::Persona& persona, const ItemBank& bank);

struct ResponseVector {
  int persona_id = 0;
  std::array<int, kItemCount> values{};

  bool operator==(const ResponseVector&) const = default;
};

ResponseVector parse_response_line(std::string_view text, int persona_id);

struct ResponseMatrix {
  std::vector<ResponseVector> rows;  // ordered by persona id
  std::size_t n() const { return rows.size(); }
};

// Throws InvalidInput on duplicate ids or out-of-range values.
void validate(const ResponseMatrix& m);
Eigen::MatrixXd to_real_matrix(const ResponseMatrix& m);

struct Dropout {
  int persona_id = 0;
  int attempts = 0;
  std::string error;
  std::string last_reply;
};

struct AdministerOptions {
  std::string model_id = "gpt-4o";
  double temperature = 0.0;
  int max_tokens = 256;
  int reprompt_budget = 3;
};

struct AdministerResult {
  ResponseMatrix matrix;
  std::vector<Dropout> dropouts;
  int requests = 0;
  int retries = 0;
};

AdministerResult administer(const std::vector<persona::Persona>& cohort, const ItemBank& bank,
                            transport::Gateway& gateway, const AdministerOptions& options = {});

struct SubscaleScores {
  int persona_id = 0;
  std::array<double, kSubscaleCount> means{};  // indexed in kSubscales order

  double operator[](Subscale s) const { return means[static_cast<std::size_t>(s)]; }
};

SubscaleScores subscale_scores(const ResponseVector& rv, const ItemBank& bank);

// responses.csv: header `persona_id,Q1,...,Q28`.
void write_responses_csv(const std::filesystem::path& path, const ResponseMatrix& m);
ResponseMatrix read_responses_csv(const std::filesystem::path& path);
void write_dropouts_jsonl(const std::filesystem::path& path, const std::vector<Dropout>& dropouts);

}  // namespace synthpsych::scale
