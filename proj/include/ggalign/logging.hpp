#pragma once

#include <cstdio>
#include <string>

namespace ggalign {

// 0 = quiet, 1 = normal (warnings + progress), 2 = verbose
inline int& log_level() {
    static int level = 1;
    return level;
}

inline void log_warning(const std::string& msg) {
    if (log_level() >= 1) std::fprintf(stderr, "[warn] %s\n", msg.c_str());
}

inline void log_info(const std::string& msg) {
    if (log_level() >= 2) std::fprintf(stderr, "[info] %s\n", msg.c_str());
}

}  // namespace ggalign
