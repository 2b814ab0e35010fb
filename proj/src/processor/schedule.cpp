#include <cctype>

#include <fmt/format.h>

#include "msmgn/processor.hpp"

namespace msmgn {

char to_char(StepKind k) {
  switch (k) {
    case StepKind::H: return 'H';
    case StepKind::L: return 'L';
    case StepKind::D: return 'D';
    case StepKind::U: return 'U';
  }
  return '?';
}

std::string Schedule::canonical() const {
  std::string out = "p=";
  std::size_t i = 0;
  bool first = true;
  while (i < steps.size()) {
    const StepKind k = steps[i];
    if (k == StepKind::D || k == StepKind::U) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < steps.size() && steps[j] == k) ++j;
    out += fmt::format("{}{}{}", first ? "" : " ", j - i, to_char(k));
    first = false;
    i = j;
  }
  return out + fmt::format(" (U={},D={})", u_count, d_count);
}

namespace {

class Scanner {
 public:
  explicit Scanner(std::string_view s) : s_(s) {}

  void skip_space() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }
  bool done() {
    skip_space();
    return pos_ >= s_.size();
  }
  char peek() {
    skip_space();
    return pos_ < s_.size() ? s_[pos_] : '\0';
  }
  void expect(char c) {
    if (peek() != c) fail(fmt::format("expected '{}'", c));
    ++pos_;
  }
  int integer() {
    skip_space();
    const std::size_t start = pos_;
    while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    if (start == pos_) fail("expected an integer");
    if (pos_ - start > 6) fail("count too large");
    return std::stoi(std::string(s_.substr(start, pos_ - start)));
  }
  char letter() {
    // The step letter must follow its count directly.
    if (pos_ >= s_.size()) fail("expected H or L");
    const char c = s_[pos_++];
    if (c != 'H' && c != 'L') fail(fmt::format("unknown step letter '{}'", c));
    return c;
  }
  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError(fmt::format("bad processor schedule '{}' at column {}: {}", s_, pos_ + 1, what));
  }

 private:
  std::string_view s_;
  std::size_t pos_ = 0;
};

}  // namespace

Schedule parse_schedule(std::string_view text) {
  Scanner in(text);
  in.expect('p');
  in.expect('=');
  Schedule s;
  s.text = std::string(text);
  std::vector<std::pair<char, int>> groups;
  while (!in.done() && in.peek() != '(') {
    const int n = in.integer();
    const char c = in.letter();
    if (n <= 0) in.fail("step counts must be positive");
    groups.emplace_back(c, n);
  }
  if (groups.empty()) in.fail("no processor steps");
  in.expect('(');
  int declared_u = -1, declared_d = -1;
  for (int k = 0; k < 2; ++k) {
    const char key = in.peek();
    if (key != 'U' && key != 'D') in.fail("expected U= or D=");
    in.expect(key);
    in.expect('=');
    int& slot = key == 'U' ? declared_u : declared_d;
    if (slot >= 0) in.fail(fmt::format("{} given twice", key));
    slot = in.integer();
    if (k == 0) in.expect(',');
  }
  in.expect(')');
  if (!in.done()) in.fail("trailing characters");

  char level = 'H';
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto [c, n] = groups[g];
    if (g == 0 && c != 'H') in.fail("a schedule must start on the fine level (H)");
    if (c != level) {
      s.steps.push_back(c == 'L' ? StepKind::D : StepKind::U);
      (c == 'L' ? s.d_count : s.u_count) += 1;
      level = c;
    }
    for (int k = 0; k < n; ++k) s.steps.push_back(c == 'H' ? StepKind::H : StepKind::L);
    (c == 'H' ? s.h_count : s.l_count) += n;
  }
  if (level != 'H') in.fail("a schedule must end on the fine level (H)");
  if (declared_u != s.u_count || declared_d != s.d_count) {
    throw ParseError(fmt::format("schedule '{}' declares U={},D={} but its level changes imply U={},D={}", text,
                                 declared_u, declared_d, s.u_count, s.d_count));
  }
  return s;
}

}  // namespace msmgn
