#pragma once

#include <string>

#include <json.hpp>

namespace dlspf {

// SHA-256 hex digest.
std::string sha256_hex(const std::string& data);

// Declarative run description. The content hash is computed over the
// canonical form (sorted keys, no insignificant whitespace) so formatting
// and key order never change the identity of an experiment.
class ExperimentConfig {
public:
    static ExperimentConfig from_json(nlohmann::json j);
    static ExperimentConfig load_file(const std::string& path);

    const nlohmann::json& root() const { return root_; }
    nlohmann::json& root() { return root_; }

    std::string canonical() const;
    std::string hash() const;

    // Dotted-path lookup ("filter.n_particles") with a default.
    template <typename T>
    T get(const std::string& dotted, T fallback) const {
        const nlohmann::json* cur = &root_;
        std::size_t pos = 0;
        while (pos <= dotted.size()) {
            const std::size_t dot = dotted.find('.', pos);
            const std::string key = dotted.substr(pos, dot == std::string::npos ? dot : dot - pos);
            auto it = cur->find(key);
            if (it == cur->end()) return fallback;
            cur = &*it;
            if (dot == std::string::npos) break;
            pos = dot + 1;
        }
        return cur->get<T>();
    }

    bool has(const std::string& dotted) const;
    std::string name() const { return get<std::string>("name", "experiment"); }
    std::uint64_t seed() const { return get<std::uint64_t>("seed", 0); }

private:
    nlohmann::json root_;
};

}  // namespace dlspf
