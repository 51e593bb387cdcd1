#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "attbus/bytes.hpp"

#ifndef ATTBUS_SOURCE_DIR
#error "ATTBUS_SOURCE_DIR must be defined by the build"
#endif

namespace testutil {

inline std::filesystem::path source_dir() {
    return std::filesystem::path(ATTBUS_SOURCE_DIR);
}

inline std::filesystem::path vectors_dir() {
    return source_dir() / "vectors";
}

inline std::filesystem::path fixtures_dir() {
    return source_dir() / "tests" / "fixtures";
}

// Vector file format: whitespace-separated input fields, "->", output fields.
// Lines starting with '#' are comments.
struct VectorLine {
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
};

inline std::vector<VectorLine> load_vectors(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw std::runtime_error("cannot open vector file " + file.string());
    std::vector<VectorLine> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        VectorLine v;
        std::string tok;
        bool after_arrow = false;
        while (ss >> tok) {
            if (tok == "->") {
                after_arrow = true;
                continue;
            }
            (after_arrow ? v.outputs : v.inputs).push_back(tok);
        }
        out.push_back(std::move(v));
    }
    return out;
}

// Hex column; "-" marks an empty field.
inline attbus::Bytes hex_field(const std::string& tok) {
    return tok == "-" ? attbus::Bytes{} : attbus::from_hex(tok);
}

inline attbus::Bytes random_payload(std::mt19937_64& rng, size_t len) {
    attbus::Bytes out(len);
    for (auto& b : out) b = static_cast<uint8_t>(rng());
    return out;
}

inline std::filesystem::path temp_dir(const std::string& tag) {
    auto dir = std::filesystem::temp_directory_path() /
               ("attbus-test-" + tag + "-" + std::to_string(::getpid()));
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace testutil
