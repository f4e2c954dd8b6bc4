// Acceptance harness: one criterion per run (or all), one PASS/FAIL line each.

#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

namespace acceptance {
struct Criterion {
    std::string name;
    std::function<bool()> run;
};
std::vector<Criterion>& registry();
}  // namespace acceptance

int main(int argc, char** argv) {
    std::string only;
    bool list = false;
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) only = argv[++i];
        else if (std::strcmp(argv[i], "--list") == 0) list = true;
    }
    auto& all = acceptance::registry();
    if (list) {
        for (const auto& c : all) std::printf("%s\n", c.name.c_str());
        return 0;
    }
    int failures = 0;
    bool matched = false;
    for (const auto& c : all) {
        if (!only.empty() && c.name != only) continue;
        matched = true;
        bool ok = false;
        try {
            ok = c.run();
        } catch (const std::exception& e) {
            std::printf("[FAIL] %s: exception: %s\n", c.name.c_str(), e.what());
            ++failures;
            continue;
        }
        std::printf("[%s] %s\n", ok ? "PASS" : "FAIL", c.name.c_str());
        if (!ok) ++failures;
    }
    if (!only.empty() && !matched) {
        std::printf("[FAIL] unknown criterion '%s'\n", only.c_str());
        return 1;
    }
    return failures == 0 ? 0 : 1;
}
