#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace tiltfield::cli {

enum ExitCode : int {
    kOk = 0,
    kFailure = 1,
    kBadFlags = 2,
    kIoError = 3,
    kDiverged = 4,
    kShapeMismatch = 5,
};

/// Runs `tiltfield <subcommand> ...`; args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int cmd_simulate(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int cmd_train(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int cmd_reconstruct(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int cmd_evaluate(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tiltfield::cli
