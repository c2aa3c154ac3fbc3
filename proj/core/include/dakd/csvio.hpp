#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dakd/errors.hpp"

namespace dakd {

inline uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

// "cfg k1=v1 k2=v2 ... fingerprint=0x..." comment payload for CSV headers.
inline std::string config_fingerprint(const std::string& config_line) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "0x%016llx",
                  static_cast<unsigned long long>(fnv1a64(config_line)));
    return "cfg " + config_line + " fingerprint=" + std::string(buf);
}

// CSV with one comment line (config fingerprint) followed by a header row.
inline void write_csv(const std::filesystem::path& path, const std::string& fingerprint,
                      const std::string& header,
                      const std::vector<std::vector<std::string>>& rows) {
    std::ofstream out(path);
    if (!out) throw DataError("csv: cannot write " + path.string());
    out << "# " << fingerprint << "\n" << header << "\n";
    for (const auto& row : rows) {
        for (size_t i = 0; i < row.size(); ++i) {
            if (i) out << ',';
            out << row[i];
        }
        out << "\n";
    }
}

inline std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace dakd
