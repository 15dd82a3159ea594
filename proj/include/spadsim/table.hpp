#pragma once

#include <charconv>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

// Small deterministic text helpers shared by the CSV/report writers. Doubles
// are rendered with std::to_chars (shortest round-trip form) so rerunning a
// seed reproduces output files byte for byte.

namespace spadsim {

inline std::string format_double(double v) {
    char buf[40];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

inline std::string format_u64(std::uint64_t v) {
    char buf[24];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

inline std::string format_i64(std::int64_t v) {
    char buf[24];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

/// Column-named table of preformatted cells; the common shape of sweep CSV
/// files and plot-data files.
struct Table {
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;

    std::vector<std::string>& add_row() {
        rows.emplace_back();
        rows.back().reserve(columns.size());
        return rows.back();
    }
};

inline void write_csv(const Table& table, std::ostream& os) {
    for (std::size_t i = 0; i < table.columns.size(); ++i) {
        if (i) os << ',';
        os << table.columns[i];
    }
    os << '\n';
    for (const auto& row : table.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) os << ',';
            os << row[i];
        }
        os << '\n';
    }
}

}  // namespace spadsim
