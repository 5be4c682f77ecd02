#pragma once

// Runs the segfuse executable through the shell and reports its exit code.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

namespace cli_runner {

inline std::string quote(const std::string& s) {
    std::string out = "'";
    for (char c : s) {
        if (c == '\'') out += "'\\''";
        else out += c;
    }
    return out + "'";
}

struct Result {
    int code = -1;
    std::string out;
};

// `args` are passed verbatim (already quoted where needed). stdout is
// captured; stderr goes to `log` when given, otherwise is discarded.
inline Result run(const std::string& args, const std::filesystem::path& scratch, const std::string& log = "") {
    const auto out_file = scratch / "cli_stdout.txt";
    const std::string cmd = quote(SEGFUSE_CLI_PATH) + " " + args + " > " + quote(out_file.string()) + " 2>" +
                            (log.empty() ? std::string("/dev/null") : ">" + quote(log));
    const int status = std::system(cmd.c_str());
    Result r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(out_file, std::ios::binary);
    r.out.assign(std::istreambuf_iterator<char>(in), {});
    return r;
}

inline std::vector<std::uint8_t> slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace cli_runner
