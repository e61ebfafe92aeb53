// io.hpp: deterministic number formatting and CSV reading/writing

#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace eopulse::io {

// Shortest decimal text that round-trips to the same double.
std::string format_number(double value);

class CsvWriter {
public:
    CsvWriter(std::ostream& out, const std::vector<std::string>& header);

    void row(const std::vector<double>& values);
    // Leading text cell followed by numbers.
    void row(const std::string& label, const std::vector<double>& values);

private:
    std::ostream& out_;
    std::size_t columns_;
};

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
};

// Reads a numeric CSV with one header line. Throws std::runtime_error on a
// malformed cell or a ragged row.
CsvTable read_numeric_csv(const std::filesystem::path& path);

// Writes the whole file at once, creating parent directories.
void write_file(const std::filesystem::path& path, const std::string& content);

} // namespace eopulse::io
