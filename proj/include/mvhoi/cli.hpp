#pragma once

#include <string>
#include <vector>

namespace mvhoi::cli {

// argv without the program name, e.g. {"gen-data", "--config", "c.json"}.
// Returns the process exit code; failures print one JSON object to stderr.
int run_command(const std::vector<std::string>& args);

int main(int argc, char** argv);

} // namespace mvhoi::cli
