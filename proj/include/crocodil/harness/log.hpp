#pragma once

#include <chrono>
#include <fstream>
#include <string>

#include <json.hpp>

#include "crocodil/numerics/tensor.hpp"

namespace crocodil {

using json = nlohmann::json;

// Append-only JSON-lines log; one record per line, flushed as written.
class JsonlLogger {
  public:
    JsonlLogger() = default;
    explicit JsonlLogger(const std::string& path) : out_(path, std::ios::app) {
        CROC_CHECK(out_.good(), "log: cannot open '" + path + "'");
    }

    void log(const json& record) {
        if (!out_.is_open()) return;
        out_ << record.dump() << "\n";
        out_.flush();
    }

    static double wallclock() {
        return std::chrono::duration<double>(
                   std::chrono::steady_clock::now().time_since_epoch())
            .count();
    }

  private:
    std::ofstream out_;
};

} // namespace crocodil
