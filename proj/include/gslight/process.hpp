#pragma once

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <string>
#include <vector>

#include "gslight/errors.hpp"

namespace gslight {

struct ProcessResult {
  int exit_code = -1;
  std::string stdout_text;
};

/// POSIX single-quote escaping.
inline std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  return out + "'";
}

/// Runs `command` (a shell command prefix, may contain its own arguments)
/// followed by the quoted `args`, capturing standard output.
inline ProcessResult run_process(const std::string& command, const std::vector<std::string>& args) {
  std::string line = command;
  for (const auto& a : args) line += " " + shell_quote(a);
  FILE* pipe = ::popen(line.c_str(), "r");
  if (!pipe) fail(ErrorKind::adapter, "cannot launch: " + command);
  ProcessResult r;
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.stdout_text.append(buf.data(), n);
  const int status = ::pclose(pipe);
  r.exit_code = (status != -1 && WIFEXITED(status)) ? WEXITSTATUS(status) : -1;
  return r;
}

}  // namespace gslight
