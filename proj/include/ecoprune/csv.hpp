#ifndef ECOPRUNE_CSV_HPP
#define ECOPRUNE_CSV_HPP

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace ecoprune {

// Minimal CSV sink: fixed header, comma separator, '.' decimals, LF endings.
// Doubles go through %.17g so identical runs produce identical bytes.
class CsvWriter {
public:
    CsvWriter(const std::string& path, const std::vector<std::string>& header)
        : f_(path, std::ios::binary | std::ios::trunc) {
        if (!f_) throw std::runtime_error("csv: cannot open " + path);
        for (std::size_t i = 0; i < header.size(); ++i)
            f_ << (i ? "," : "") << header[i];
        f_ << "\n";
        cols_ = header.size();
    }

    CsvWriter& cell(const std::string& v) {
        sep();
        f_ << v;
        return *this;
    }
    CsvWriter& cell(double v) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return cell(std::string(buf));
    }
    CsvWriter& cell(long long v) { return cell(std::to_string(v)); }
    CsvWriter& cell(int v) { return cell(std::to_string(v)); }

    void end_row() {
        if (col_ != cols_) throw contract_error("csv: row has wrong arity");
        f_ << "\n";
        col_ = 0;
    }

private:
    void sep() {
        if (col_ > 0) f_ << ",";
        ++col_;
    }
    std::ofstream f_;
    std::size_t cols_ = 0;
    std::size_t col_ = 0;
};

}  // namespace ecoprune

#endif
