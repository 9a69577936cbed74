#include "cascade/chat.hpp"

#include "cascade/errors.hpp"

namespace cascade::chat {

namespace {

constexpr std::string_view kStart = "<|im_start|>";
constexpr std::string_view kEnd = "<|im_end|>\n";
constexpr std::string_view kEmptyThink = "<think></think>";
constexpr std::string_view kThinkOpen = "<think>\n";
constexpr std::string_view kThinkClose = "</think>\n";
constexpr std::string_view kCallOpen = "\n<tool_call>\n";
constexpr std::string_view kCallClose = "\n</tool_call>";

std::string escape(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    if (c == '\\' || c == '<') out.push_back('\\');
    out.push_back(c);
  }
  return out;
}

std::string unescape(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\\' && i + 1 < s.size()) ++i;
    out.push_back(s[i]);
  }
  return out;
}

Role parse_role(std::string_view s) {
  for (Role r : {Role::system, Role::user, Role::assistant, Role::tool})
    if (to_string(r) == s) return r;
  throw InvalidArgument("unknown chat role '" + std::string(s) + "'");
}

bool has_reasoning(const Message& m) { return m.reasoning && !m.reasoning->empty(); }

// Position of the first unescaped occurrence of `marker` at or after `from`. Markers always
// start with '<' or '\n', and escaped text never contains a bare '<'.
std::size_t find_marker(std::string_view text, std::string_view marker, std::size_t from) {
  return text.find(marker, from);
}

}  // namespace

std::string_view to_string(Role r) {
  switch (r) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
    case Role::tool: return "tool";
  }
  return "unknown";
}

std::string render_chat(std::span<const Message> messages, bool thinking) {
  std::string out;
  for (const Message& m : messages) {
    if (m.role != Role::assistant && (has_reasoning(m) || !m.tool_calls.empty()))
      throw InvalidArgument("only assistant messages may carry reasoning or tool calls");
    out += kStart;
    out += to_string(m.role);
    out += '\n';
    if (m.role == Role::assistant) {
      if (thinking) {
        out += kThinkOpen;
        if (m.reasoning) out += escape(*m.reasoning);
        out += kThinkClose;
      } else {
        if (has_reasoning(m))
          throw InvalidArgument("assistant reasoning present while rendering in non-thinking mode");
        out += kEmptyThink;
      }
    }
    out += escape(m.content);
    for (const std::string& call : m.tool_calls) {
      out += kCallOpen;
      out += escape(call);
      out += kCallClose;
    }
    out += kEnd;
  }
  return out;
}

std::vector<Message> parse_chat(std::string_view text) {
  std::vector<Message> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    if (text.substr(pos, kStart.size()) != kStart) throw InvalidArgument("malformed chat: missing start marker");
    pos += kStart.size();
    const std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) throw InvalidArgument("malformed chat: missing role line");
    Message m;
    m.role = parse_role(text.substr(pos, nl - pos));
    pos = nl + 1;
    const std::size_t end = find_marker(text, kEnd, pos);
    if (end == std::string_view::npos) throw InvalidArgument("malformed chat: missing end marker");
    std::string_view body = text.substr(pos, end - pos);
    pos = end + kEnd.size();

    if (m.role == Role::assistant) {
      if (body.starts_with(kEmptyThink)) {
        body.remove_prefix(kEmptyThink.size());
      } else if (body.starts_with(kThinkOpen)) {
        body.remove_prefix(kThinkOpen.size());
        const std::size_t close = find_marker(body, kThinkClose, 0);
        if (close == std::string_view::npos) throw InvalidArgument("malformed chat: unclosed <think>");
        std::string reasoning = unescape(body.substr(0, close));
        if (!reasoning.empty()) m.reasoning = std::move(reasoning);
        body.remove_prefix(close + kThinkClose.size());
      } else {
        throw InvalidArgument("malformed chat: assistant turn without a think block");
      }
    }
    std::size_t call = find_marker(body, kCallOpen, 0);
    m.content = unescape(body.substr(0, call));
    while (call != std::string_view::npos) {
      const std::size_t start = call + kCallOpen.size();
      const std::size_t close = find_marker(body, kCallClose, start);
      if (close == std::string_view::npos) throw InvalidArgument("malformed chat: unclosed <tool_call>");
      m.tool_calls.push_back(unescape(body.substr(start, close - start)));
      call = find_marker(body, kCallOpen, close + kCallClose.size());
    }
    out.push_back(std::move(m));
  }
  return out;
}

std::vector<Message> retain_thoughts(std::span<const Message> messages, ThoughtRetention policy) {
  std::vector<Message> out(messages.begin(), messages.end());
  if (policy == ThoughtRetention::full) return out;
  std::size_t keep_from = out.size();  // none: nothing is kept
  if (policy == ThoughtRetention::latest_turn) {
    keep_from = 0;
    for (std::size_t i = 0; i < out.size(); ++i)
      if (out[i].role == Role::user) keep_from = i + 1;
  }
  for (std::size_t i = 0; i < out.size() && i < keep_from; ++i) out[i].reasoning.reset();
  return out;
}

}  // namespace cascade::chat
