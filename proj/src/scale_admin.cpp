#include "synthpsych/scale_admin.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "synthpsych/errors.hpp"
#include "synthpsych/parallel.hpp"

namespace synthpsych::scale {

std::string_view to_string(Subscale s) {
  switch (s) {
    case Subscale::IMTK: return "IMTK";
    case Subscale::IMTA: return "IMTA";
    case Subscale::IMES: return "IMES";
    case Subscale::EMID: return "EMID";
    case Subscale::EMIN: return "EMIN";
    case Subscale::EMEX: return "EMEX";
    case Subscale::AMOT: return "AMOT";
  }
  return "?";
}

std::string_view long_name(Subscale s) {
  switch (s) {
    case Subscale::IMTK: return "Intrinsic Motivation - To Know";
    case Subscale::IMTA: return "Intrinsic Motivation - Toward Accomplishment";
    case Subscale::IMES: return "Intrinsic Motivation - Experience Stimulation";
    case Subscale::EMID: return "Extrinsic Motivation - Identified Regulation";
    case Subscale::EMIN: return "Extrinsic Motivation - Introjected Regulation";
    case Subscale::EMEX: return "Extrinsic Motivation - External Regulation";
    case Subscale::AMOT: return "Amotivation";
  }
  return "?";
}

Subscale parse_subscale(std::string_view label) {
  for (Subscale s : kSubscales) {
    if (to_string(s) == label) return s;
  }
  throw Error(ErrorCode::InvalidInput, "unknown subscale label: " + std::string(label));
}

std::array<int, 4> subscale_items(Subscale s) {
  std::array<int, 4> out{};
  std::size_t k = 0;
  for (int i = 0; i < kItemCount; ++i) {
    if (kAmsItemMap[static_cast<std::size_t>(i)] == s) out[k++] = i + 1;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Item bank

ItemBank parse_item_bank(std::string_view json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::BankInvalid, std::string("item bank is not valid JSON: ") + e.what());
  }

  ItemBank bank;
  try {
    bank.scale_points = j.value("scale_points", kScalePoints);
    bank.stem = j.value("stem", "");
    if (j.contains("anchors")) {
      const auto& a = j.at("anchors");
      bank.anchors = {a.at(0).get<std::string>(), a.at(1).get<std::string>()};
    }
    for (const auto& it : j.at("items")) {
      Subscale s{};
      try {
        s = parse_subscale(it.at("subscale").get<std::string>());
      } catch (const Error& e) {
        throw Error(ErrorCode::BankInvalid, e.what());
      }
      bank.items.push_back({it.at("index").get<int>(), it.at("text").get<std::string>(), s});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::BankInvalid, std::string("item bank schema: ") + e.what());
  }

  if (bank.scale_points != kScalePoints) {
    throw Error(ErrorCode::BankInvalid, fmt::format("scale_points must be {}, got {}", kScalePoints, bank.scale_points));
  }
  if (bank.items.size() != kItemCount) {
    throw Error(ErrorCode::BankInvalid, fmt::format("expected {} items, found {}", kItemCount, bank.items.size()));
  }
  std::sort(bank.items.begin(), bank.items.end(), [](const Item& a, const Item& b) { return a.index < b.index; });
  for (int i = 0; i < kItemCount; ++i) {
    const Item& item = bank.items[static_cast<std::size_t>(i)];
    if (item.index != i + 1) {
      throw Error(ErrorCode::BankInvalid, fmt::format("item indices must be exactly 1..{}", kItemCount));
    }
    if (item.text.find_first_not_of(" \t\r\n") == std::string::npos) {
      throw Error(ErrorCode::BankInvalid, fmt::format("item {} has empty text", item.index));
    }
    const Subscale expected = kAmsItemMap[static_cast<std::size_t>(i)];
    if (item.subscale != expected) {
      throw Error(ErrorCode::BankInvalid, fmt::format("item {} assigned to {}, AMS mapping says {}", item.index,
                                                      to_string(item.subscale), to_string(expected)));
    }
  }
  return bank;
}

ItemBank load_item_bank(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::BankInvalid, "cannot read item bank " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_item_bank(ss.str());
}

// ---------------------------------------------------------------------------
// Prompt and parsing

std::string build_response_prompt(const persona::Persona& persona, const ItemBank& bank) {
  if (persona.description.find_first_not_of(" \t\r\n") == std::string::npos) {
    throw Error(ErrorCode::InvalidInput, fmt::format("persona {} has an empty description", persona.id));
  }
  if (bank.items.size() != kItemCount) throw Error(ErrorCode::InvalidInput, "item bank must hold 28 items");

  std::string items;
  if (!bank.stem.empty()) items += bank.stem + "\n";
  for (const Item& item : bank.items) {
    items += fmt::format("{}. {}\n", item.index, item.text);
  }
  items.pop_back();

  return fmt::format(
      "Imagine the following student: {0}, {1} - {2},\n"
      "\n"
      "This student is now responding to the Academic Motivation Scale (AMS).\n"
      "\n"
      "There are {3} items, each rated from 1 ({4}) to {5} ({6}).\n"
      "\n"
      "{7},\n"
      "\n"
      "Please return exactly {3} integers separated only by commas. No explanation, no labels. Just the numbers.",
      persona.age, persona.gender, persona.description, kItemCount, bank.anchors.first, bank.scale_points,
      bank.anchors.second, items);
}

ResponseVector parse_response_line(std::string_view text, int persona_id) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) throw Error(ErrorCode::LengthMismatch, "empty reply");
  const auto last = text.find_last_not_of(" \t\r\n");
  const std::string_view body = text.substr(first, last - first + 1);

  std::vector<std::string_view> tokens;
  std::size_t pos = 0;
  for (;;) {
    const auto comma = body.find(',', pos);
    tokens.push_back(body.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  if (tokens.size() != kItemCount) {
    throw Error(ErrorCode::LengthMismatch, fmt::format("expected {} numbers, got {}", kItemCount, tokens.size()));
  }

  ResponseVector rv;
  rv.persona_id = persona_id;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    std::string_view tok = tokens[i];
    if (i > 0) tok.remove_prefix(std::min(tok.find_first_not_of(' '), tok.size()));
    int value = 0;
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
    if (tok.empty() || tok.front() == '-' || tok.front() == '+' || ec != std::errc{} ||
        ptr != tok.data() + tok.size()) {
      throw Error(ErrorCode::NotAnInteger, fmt::format("position {}: \"{}\" is not an integer", i + 1, tok));
    }
    if (value < 1 || value > kScalePoints) {
      throw Error(ErrorCode::ValueOutOfRange, fmt::format("position {}: {} outside 1..{}", i + 1, value, kScalePoints));
    }
    rv.values[i] = value;
  }
  return rv;
}

// ---------------------------------------------------------------------------
// Matrix

void validate(const ResponseMatrix& m) {
  std::set<int> ids;
  for (const auto& row : m.rows) {
    if (!ids.insert(row.persona_id).second) {
      throw Error(ErrorCode::InvalidInput, fmt::format("duplicate persona id {}", row.persona_id));
    }
    for (int v : row.values) {
      if (v < 1 || v > kScalePoints) {
        throw Error(ErrorCode::InvalidInput, fmt::format("persona {}: response {} outside 1..7", row.persona_id, v));
      }
    }
  }
}

Eigen::MatrixXd to_real_matrix(const ResponseMatrix& m) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(m.n()), kItemCount);
  for (std::size_t r = 0; r < m.n(); ++r) {
    for (int c = 0; c < kItemCount; ++c) out(static_cast<Eigen::Index>(r), c) = m.rows[r].values[c];
  }
  return out;
}

AdministerResult administer(const std::vector<persona::Persona>& cohort, const ItemBank& bank,
                            transport::Gateway& gateway, const AdministerOptions& options) {
  if (cohort.empty()) throw Error(ErrorCode::InvalidInput, "cannot administer to an empty cohort");

  struct Outcome {
    std::optional<ResponseVector> response;
    Dropout dropout;
    int attempts = 0;
  };
  std::vector<Outcome> outcomes(cohort.size());

  parallel_for(cohort.size(), gateway.config().max_in_flight, [&](std::size_t i) {
    const auto& p = cohort[i];
    transport::ChatRequest req{options.model_id,
                               {{transport::Role::User, build_response_prompt(p, bank)}},
                               options.temperature,
                               options.max_tokens};
    Outcome& out = outcomes[i];
    for (int attempt = 0; attempt <= options.reprompt_budget; ++attempt) {
      req.attempt = attempt;
      out.attempts = attempt + 1;
      const auto reply = gateway.chat_complete(req);
      try {
        out.response = parse_response_line(reply.text, p.id);
        return;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::LengthMismatch && e.code() != ErrorCode::ValueOutOfRange &&
            e.code() != ErrorCode::NotAnInteger) {
          throw;
        }
        out.dropout = {p.id, attempt + 1, e.what(), reply.text};
        spdlog::warn("persona {} reply unparseable ({})", persona::format_id(p.id), e.what());
      }
    }
  });

  AdministerResult result;
  for (auto& out : outcomes) {
    result.requests += out.attempts;
    if (out.response) {
      result.retries += out.attempts - 1;
      result.matrix.rows.push_back(*out.response);
    } else {
      result.retries += out.attempts - 1;
      result.dropouts.push_back(std::move(out.dropout));
    }
  }
  std::sort(result.matrix.rows.begin(), result.matrix.rows.end(),
            [](const ResponseVector& a, const ResponseVector& b) { return a.persona_id < b.persona_id; });
  validate(result.matrix);
  if (!result.dropouts.empty()) {
    spdlog::warn("{} of {} personas dropped; n = {}", result.dropouts.size(), cohort.size(), result.matrix.n());
  }
  return result;
}

SubscaleScores subscale_scores(const ResponseVector& rv, const ItemBank& bank) {
  std::array<double, kSubscaleCount> sums{};
  std::array<int, kSubscaleCount> counts{};
  for (const Item& item : bank.items) {
    const auto s = static_cast<std::size_t>(item.subscale);
    sums[s] += rv.values[static_cast<std::size_t>(item.index - 1)];
    ++counts[s];
  }
  SubscaleScores out;
  out.persona_id = rv.persona_id;
  for (std::size_t s = 0; s < kSubscaleCount; ++s) out.means[s] = sums[s] / counts[s];
  return out;
}

// ---------------------------------------------------------------------------
// Files

void write_responses_csv(const std::filesystem::path& path, const ResponseMatrix& m) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  out << "persona_id";
  for (int i = 1; i <= kItemCount; ++i) out << ",Q" << i;
  out << '\n';
  for (const auto& row : m.rows) {
    out << row.persona_id;
    for (int v : row.values) out << ',' << v;
    out << '\n';
  }
}

ResponseMatrix read_responses_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::IoFailure, path.string() + " is empty");
  std::string expected = "persona_id";
  for (int i = 1; i <= kItemCount; ++i) expected += ",Q" + std::to_string(i);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != expected) throw Error(ErrorCode::IoFailure, path.string() + ": unexpected header");

  ResponseMatrix m;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    int id = 0;
    const auto [ptr, ec] = std::from_chars(line.data(), line.data() + comma, id);
    if (comma == std::string::npos || ec != std::errc{} || ptr != line.data() + comma) {
      throw Error(ErrorCode::IoFailure, fmt::format("{}:{}: bad persona_id", path.string(), line_no));
    }
    try {
      m.rows.push_back(parse_response_line(std::string_view(line).substr(comma + 1), id));
    } catch (const Error& e) {
      throw Error(ErrorCode::IoFailure, fmt::format("{}:{}: {}", path.string(), line_no, e.what()));
    }
  }
  validate(m);
  return m;
}

void write_dropouts_jsonl(const std::filesystem::path& path, const std::vector<Dropout>& dropouts) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  for (const auto& d : dropouts) {
    out << nlohmann::json{{"persona_id", d.persona_id},
                          {"attempts", d.attempts},
                          {"error", d.error},
                          {"last_reply", d.last_reply}}
               .dump()
        << '\n';
  }
}

}  // namespace synthpsych::scale
