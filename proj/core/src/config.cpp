#include "dlspf/config.hpp"

#include <fstream>

#include <openssl/evp.h>

#include "dlspf/errors.hpp"

namespace dlspf {

std::string sha256_hex(const std::string& data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (ctx == nullptr) throw std::runtime_error("EVP_MD_CTX_new failed");
    bool ok = EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) == 1 &&
              EVP_DigestUpdate(ctx, data.data(), data.size()) == 1 &&
              EVP_DigestFinal_ex(ctx, digest, &len) == 1;
    EVP_MD_CTX_free(ctx);
    if (!ok) throw std::runtime_error("SHA-256 computation failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xF]);
    }
    return out;
}

ExperimentConfig ExperimentConfig::from_json(nlohmann::json j) {
    if (!j.is_object()) throw ConfigError("config root must be a JSON object");
    ExperimentConfig c;
    c.root_ = std::move(j);
    return c;
}

ExperimentConfig ExperimentConfig::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }
    return from_json(std::move(j));
}

std::string ExperimentConfig::canonical() const {
    // nlohmann::json keeps object keys in sorted order (std::map); a plain
    // dump therefore yields the canonical form.
    return root_.dump();
}

std::string ExperimentConfig::hash() const { return sha256_hex(canonical()); }

bool ExperimentConfig::has(const std::string& dotted) const {
    const nlohmann::json* cur = &root_;
    std::size_t pos = 0;
    while (pos <= dotted.size()) {
        const std::size_t dot = dotted.find('.', pos);
        const std::string key = dotted.substr(pos, dot == std::string::npos ? dot : dot - pos);
        auto it = cur->find(key);
        if (it == cur->end()) return false;
        cur = &*it;
        if (dot == std::string::npos) break;
        pos = dot + 1;
    }
    return true;
}

}  // namespace dlspf
