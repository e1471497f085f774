#include "synthpsych/persona_gen.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <mutex>
#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "synthpsych/errors.hpp"
#include "synthpsych/parallel.hpp"

namespace synthpsych::persona {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

bool all_digits(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

[[noreturn]] void malformed(int line_no, std::string_view line, std::string_view why) {
  throw Error(ErrorCode::MalformedLine, fmt::format("line {}: {} in \"{}\"", line_no, why, line));
}

int count_sentence_terminators(std::string_view text) {
  return static_cast<int>(std::count_if(text.begin(), text.end(),
                                        [](char c) { return c == '.' || c == ';' || c == '!' || c == '?'; }));
}

}  // namespace

std::string format_id(int id) { return fmt::format("{:04d}", id); }

std::string build_persona_prompt(int batch_size, int start_id) {
  if (batch_size < 1) throw Error(ErrorCode::InvalidInput, "batch_size must be >= 1");
  if (start_id < 1) throw Error(ErrorCode::InvalidInput, "start_id must be >= 1");
  return fmt::format(
      "Generate {0} fictional student personas. Each should include:\n"
      "\n"
      "- Age (18–25)\n"
      "\n"
      "- Gender\n"
      "\n"
      "- A 3-sentence description of their academic personality, learning style, and motivation.\n"
      "\n"
      "Each persona should be on one line, like:\n"
      "\n"
      "{1}. 20, Female - Loves collaborative learning; often uses concept maps to organize her thoughts; "
      "tends to get anxious during exams.\n"
      "\n"
      "Only return the {0} personas, nothing else.",
      batch_size, format_id(start_id));
}

ParsedBatch parse_persona_batch(const std::string& text, int expected_count, int start_id) {
  ParsedBatch out;
  std::size_t pos = 0;
  int line_no = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    const std::string_view raw =
        std::string_view(text).substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
    pos = nl == std::string::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    const std::string_view line = trim(raw);
    if (line.empty()) continue;

    const auto dot = line.find(". ");
    if (dot == std::string_view::npos || !all_digits(line.substr(0, dot))) malformed(line_no, line, "missing id");
    const std::string_view rest = line.substr(dot + 2);

    const auto comma = rest.find(',');
    if (comma == std::string_view::npos) malformed(line_no, line, "missing ', ' after age");
    const std::string_view age_text = trim(rest.substr(0, comma));
    int age = 0;
    const auto [ptr, ec] = std::from_chars(age_text.data(), age_text.data() + age_text.size(), age);
    if (ec != std::errc{} || ptr != age_text.data() + age_text.size()) malformed(line_no, line, "age is not an integer");

    const std::string_view after_age = rest.substr(comma + 1);
    const auto dash = after_age.find(" - ");
    if (dash == std::string_view::npos) malformed(line_no, line, "missing ' - ' before description");
    const std::string_view gender = trim(after_age.substr(0, dash));
    const std::string_view description = trim(after_age.substr(dash + 3));
    if (gender.empty()) malformed(line_no, line, "empty gender");
    if (description.empty()) malformed(line_no, line, "empty description");

    if (age < kMinAge || age > kMaxAge) {
      throw Error(ErrorCode::AgeOutOfRange, fmt::format("line {}: age {} outside {}..{}", line_no, age, kMinAge, kMaxAge));
    }
    const int terminators = count_sentence_terminators(description);
    if (terminators != 3) {
      out.warnings.push_back({line_no, fmt::format("description has {} sentence terminators, expected 3", terminators)});
    }
    out.personas.push_back({start_id + static_cast<int>(out.personas.size()), age, std::string(gender),
                            std::string(description)});
  }
  if (static_cast<int>(out.personas.size()) != expected_count) {
    throw Error(ErrorCode::BatchCountMismatch,
                fmt::format("expected {} personas, got {}", expected_count, out.personas.size()));
  }
  return out;
}

CohortResult generate_cohort(const CohortSpec& spec, transport::Gateway& gateway) {
  if (spec.n_total < 1 || spec.batch_size < 1) throw Error(ErrorCode::InvalidInput, "cohort sizes must be positive");
  const int batches = (spec.n_total + spec.batch_size - 1) / spec.batch_size;

  std::vector<ParsedBatch> parsed(static_cast<std::size_t>(batches));
  std::vector<int> attempts(static_cast<std::size_t>(batches), 0);

  parallel_for(static_cast<std::size_t>(batches), gateway.config().max_in_flight, [&](std::size_t b) {
    const int start_id = 1 + static_cast<int>(b) * spec.batch_size;
    const int count = std::min(spec.batch_size, spec.n_total - start_id + 1);
    transport::ChatRequest req{spec.model_id,
                               {{transport::Role::User, build_persona_prompt(count, start_id)}},
                               spec.temperature,
                               spec.max_tokens};
    for (int attempt = 0;; ++attempt) {
      req.attempt = attempt;
      attempts[b] = attempt + 1;
      const auto reply = gateway.chat_complete(req);
      try {
        parsed[b] = parse_persona_batch(reply.text, count, start_id);
        return;
      } catch (const Error& e) {
        const bool parse_error = e.code() == ErrorCode::MalformedLine || e.code() == ErrorCode::AgeOutOfRange ||
                                 e.code() == ErrorCode::BatchCountMismatch;
        if (!parse_error) throw;
        if (attempt >= spec.reprompt_budget) {
          throw Error(ErrorCode::GenerationExhausted,
                      fmt::format("batch {} failed after {} re-prompts: {}", b + 1, spec.reprompt_budget, e.what()));
        }
        spdlog::warn("persona batch {} unparseable ({}); re-prompting", b + 1, e.what());
      }
    }
  });

  CohortResult result;
  for (std::size_t b = 0; b < parsed.size(); ++b) {
    result.requests += attempts[b];
    result.retries += attempts[b] - 1;
    for (auto& w : parsed[b].warnings) result.warnings.push_back(std::move(w));
    for (auto& p : parsed[b].personas) result.personas.push_back(std::move(p));
  }
  return result;
}

void write_personas_jsonl(const std::filesystem::path& path, const std::vector<Persona>& personas) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  for (const auto& p : personas) {
    out << nlohmann::json{{"id", p.id}, {"age", p.age}, {"gender", p.gender}, {"description", p.description}}.dump()
        << '\n';
  }
}

std::vector<Persona> read_personas_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot read " + path.string());
  std::vector<Persona> out;
  std::set<int> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Persona p{j.at("id").get<int>(), j.at("age").get<int>(), j.at("gender").get<std::string>(),
                j.at("description").get<std::string>()};
      if (!seen.insert(p.id).second) throw Error(ErrorCode::InvalidInput, fmt::format("duplicate persona id {}", p.id));
      out.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::IoFailure, fmt::format("{}:{}: {}", path.string(), line_no, e.what()));
    }
  }
  return out;
}

}  // namespace synthpsych::persona
