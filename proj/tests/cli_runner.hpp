#pragma once

// Helpers for driving the fbsr command-line tool from tests.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>

#ifndef FBSR_CLI
#error "FBSR_CLI must name the fbsr executable"
#endif

namespace cli {

namespace fs = std::filesystem;

/// Runs `fbsr <args>` inside `cwd` with stdout/stderr sent to cwd/<log>; returns the exit code.
inline int run(const fs::path& cwd, const std::string& args, const std::string& env = "",
               const std::string& log = "cli.log") {
    fs::create_directories(cwd);
    const std::string cmd = "cd '" + cwd.string() + "' && " + env + (env.empty() ? "" : " ") + "'" +
                            std::string(FBSR_CLI) + "' " + args + " >>'" + log + "' 2>&1";
    const int status = std::system(cmd.c_str());
    if (status == -1 || !WIFEXITED(status)) return -1;
    return WEXITSTATUS(status);
}

/// synth -> train -> infer -> eval with relative paths inside `cwd`; returns the first non-zero code.
inline int pipeline(const fs::path& cwd, long iterations, long seed = 5) {
    const std::string s = " --seed " + std::to_string(seed);
    const std::string small = " --set generator.channels=8 --set generator.blocks=2"
                              " --set discriminator.channels=8,16 --set discriminator.dense_units=16"
                              " --set training.batch_size=8 --set training.validate_every=50"
                              " --set training.checkpoint_every=100";
    const std::string steps[] = {
        "synth -o corpus --frames 6 --frame-size 64 --set data.videos=3 --set data.patients=3" + s,
        "train -d corpus -o run --iterations " + std::to_string(iterations) + small + s,
        "infer --checkpoint run/final.json -i corpus/lr -o sr" + s,
        "eval --sr sr --hr corpus/hr --lr corpus/lr -o eval" + s,
    };
    for (const auto& step : steps) {
        if (const int rc = run(cwd, step, "", "pipeline.log"); rc != 0) return rc;
    }
    return 0;
}

inline std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Relative path -> bytes for every regular file under `root`, skipping `skip`.
inline std::map<std::string, std::string> snapshot(const fs::path& root, const std::string& skip = "pipeline.log") {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (!e.is_regular_file()) continue;
        const auto rel = fs::relative(e.path(), root).generic_string();
        if (rel != skip) out[rel] = slurp(e.path());
    }
    return out;
}

}  // namespace cli
