#include "surgvae/csvio.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "surgvae/errors.hpp"

namespace surgvae {

std::string format_double(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
        std::size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
            cells.push_back(line.substr(start));
            break;
        }
        cells.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    // tolerate a trailing \r from CRLF files
    if (!cells.empty() && !cells.back().empty() && cells.back().back() == '\r') {
        cells.back().pop_back();
    }
    return cells;
}

bool parse_double_cell(const std::string& cell, double& out) {
    if (cell.empty()) return false;
    const char* begin = cell.data();
    const char* end = begin + cell.size();
    auto res = std::from_chars(begin, end, out);
    if (res.ec != std::errc() || res.ptr != end) {
        throw ParseError("not a number: \"" + cell + "\"");
    }
    return true;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path + " for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) throw IoError("read failed on " + path);
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << content;
    out.flush();
    if (!out) throw IoError("write failed on " + path);
}

}  // namespace surgvae
