#pragma once

#include <openssl/sha.h>

#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "samam/train.hpp"

namespace samam {

/// SHA-1 of "blob <size>\0<bytes>", the object id git assigns to a file.
inline std::string git_blob_hash(std::string_view bytes) {
    std::string payload = "blob " + std::to_string(bytes.size());
    payload.push_back('\0');
    payload.append(bytes);
    unsigned char digest[SHA_DIGEST_LENGTH];
    SHA1(reinterpret_cast<const unsigned char*>(payload.data()), payload.size(), digest);
    std::string hex;
    char buf[3];
    for (unsigned char b : digest) {
        std::snprintf(buf, sizeof buf, "%02x", b);
        hex += buf;
    }
    return hex;
}

/// Provenance of one training run. The loss records live in a separate CSV
/// file next to the manifest.
struct RunManifest {
    std::string config;
    std::uint64_t seed = 0;
    std::string checkpoint_hash;
    std::string losses_file;
    std::vector<LossRecord> losses;

    std::string to_json() const {
        nlohmann::ordered_json j;
        j["config"] = config;
        j["seed"] = seed;
        j["checkpoint_sha1"] = checkpoint_hash;
        j["losses_csv"] = losses_file;
        j["iterations"] = losses.size();
        return j.dump(2) + "\n";
    }

    static RunManifest from_json(const std::string& text, const std::string& losses_csv_text) {
        RunManifest m;
        std::size_t iterations = 0;
        try {
            const auto j = nlohmann::json::parse(text);
            m.config = j.at("config").get<std::string>();
            m.seed = j.at("seed").get<std::uint64_t>();
            m.checkpoint_hash = j.at("checkpoint_sha1").get<std::string>();
            m.losses_file = j.at("losses_csv").get<std::string>();
            iterations = j.at("iterations").get<std::size_t>();
        } catch (const nlohmann::json::exception& e) {
            fail("manifest: ", e.what());
        }
        m.losses = parse_loss_csv(losses_csv_text);
        if (m.losses.size() != iterations)
            fail("manifest records ", iterations, " iterations but the loss csv has ", m.losses.size());
        return m;
    }
};

}  // namespace samam
