#pragma once

// Chat rendering. Each message is framed as
//
//   <|im_start|>ROLE\nBODY<|im_end|>\n
//
// where ROLE is system/user/assistant/tool. Assistant bodies start with "<think></think>" in
// non-thinking mode, or "<think>\n" REASONING "</think>\n" in thinking mode, followed by the
// content and then one "\n<tool_call>\nCALL\n</tool_call>" block per tool call. Text fields are
// escaped ('\' -> "\\", '<' -> "\<") so markers inside content cannot be confused with framing;
// parse_chat inverts render_chat exactly.

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cascade::chat {

enum class Role { system, user, assistant, tool };

std::string_view to_string(Role r);

struct Message {
  Role role = Role::user;
  std::optional<std::string> reasoning;  // assistant only; empty and absent are equivalent
  std::string content;
  std::vector<std::string> tool_calls;   // assistant only

  friend bool operator==(const Message&, const Message&) = default;
};

std::string render_chat(std::span<const Message> messages, bool thinking);

/// Inverse of render_chat; empty reasoning comes back as std::nullopt.
std::vector<Message> parse_chat(std::string_view text);

enum class ThoughtRetention { latest_turn, none, full };

/// latest_turn keeps reasoning only on assistant messages after the most recent user message;
/// none strips every reasoning field; full returns the input unchanged.
std::vector<Message> retain_thoughts(std::span<const Message> messages, ThoughtRetention policy);

}  // namespace cascade::chat
