#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "synthpsych/transport.hpp"

namespace synthpsych::persona {

inline constexpr int kMinAge = 18;
inline constexpr int kMaxAge = 25;

struct Persona {
  int id = 0;
  int age = 0;
  std::string gender;
  std::string description;

  bool operator==(const Persona&) const = default;
};

// Zero-padded display id, e.g. 7 -> "0007".
std::string format_id(int id);

struct CohortSpec {
  int n_total = 2000;
  int batch_size = 20;
  double temperature = 1.0;
  std::string seed_note;
  std::string model_id = "gpt-4o";
  int max_tokens = 4096;
  int reprompt_budget = 3;
};

std::string build_persona_prompt(int batch_size, int start_id);

struct ParseWarning {
  int line = 0;
  std::string message;
};

struct ParsedBatch {
  std::vector<Persona> personas;
  std::vector<ParseWarning> warnings;
};

// One persona per non-empty line, `<digits>. <age>, <gender> - <description>`. Emitted ids
// are discarded; personas are renumbered from start_id.
ParsedBatch parse_persona_batch(const std::string& text, int expected_count, int start_id);

struct CohortResult {
  std::vector<Persona> personas;
  int requests = 0;  // chat calls issued, including re-prompts
  int retries = 0;
  std::vector<ParseWarning> warnings;
};

CohortResult generate_cohort(const CohortSpec& spec, transport::Gateway& gateway);

// personas.jsonl: one {id, age, gender, description} object per line.
void write_personas_jsonl(const std::filesystem::path& path, const std::vector<Persona>& personas);
std::vector<Persona> read_personas_jsonl(const std::filesystem::path& path);

}  // namespace synthpsych::persona
