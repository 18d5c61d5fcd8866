#pragma once

// Prompt templates. The wording is fixed; only {question} (and the word
// budget for the concise variants) is substituted.

#include <optional>
#include <string>

#include "cotclip/errors.hpp"

namespace cotclip::prompts {

inline constexpr const char* kTemplateIds[] = {"qa", "math", "ccot_qa", "ccot_math"};

inline std::string render_prompt(const std::string& template_id, const std::string& question,
                                 std::optional<int> budget_words = std::nullopt) {
  const std::string tail =
      "Directly output your final answer within \\boxed{}. DO NOT say anything else.\n \n\n"
      "Question: " + question;
  auto ccot_line = [&]() -> std::string {
    if (!budget_words)
      throw ConfigError("template '" + template_id + "' needs a word budget");
    return "You should think step by step, and limit the thinking process length to " +
           std::to_string(*budget_words) + " words.\n";
  };
  if (template_id == "qa") return "Answer the following question.\n" + tail;
  if (template_id == "math") return "Solve the following math problem. \n" + tail;
  if (template_id == "ccot_qa") return "Answer the following question.\n" + ccot_line() + tail;
  if (template_id == "ccot_math")
    return "Solve the following math problem. \n" + ccot_line() + tail;
  throw ConfigError("unknown prompt template '" + template_id + "'");
}

}  // namespace cotclip::prompts
