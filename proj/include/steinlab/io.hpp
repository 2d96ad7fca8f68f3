// Output plumbing: CSV files (comma separated, '.' decimal, header row, a
// schema_version column, and a config-hash comment line) and JSON summaries.
#pragma once

#include "steinlab/common.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace steinlab {

inline std::string format_full(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string hash_hex(std::uint64_t h) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

class CsvWriter {
  public:
    CsvWriter(const std::filesystem::path& path, std::uint64_t config_hash,
              const std::vector<std::string>& columns)
        : out_(path) {
        if (!out_) throw std::runtime_error("cannot open " + path.string());
        out_ << "# config=" << hash_hex(config_hash) << "\n";
        out_ << "schema_version";
        for (const auto& c : columns) out_ << "," << c;
        out_ << "\n";
    }

    void row(const std::vector<std::string>& cells) {
        out_ << kSchemaVersion;
        for (const auto& c : cells) out_ << "," << c;
        out_ << "\n";
    }

    static constexpr int kSchemaVersion = 1;

  private:
    std::ofstream out_;
};

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string());
    out << j.dump(2) << "\n";
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string());
    out << text;
}

}  // namespace steinlab
