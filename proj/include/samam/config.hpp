#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <string_view>

#include "samam/scan_order.hpp"
#include "samam/ssm.hpp"

namespace samam {

/// Hyperparameters of the whole network. Serialized as key=value lines.
struct ModelConfig {
    std::size_t channels = 16;  // C
    std::size_t expanded = 32;  // E
    std::size_t state_dim = 4;  // N
    std::size_t encoder_depth = 2;
    std::size_t groups = 2;
    std::size_t blocks_per_group = 2;
    std::size_t sconv_kernel = 3;
    std::size_t se_reduction = 4;
    ScanMode scan_mode = ScanMode::zigzag;
    ssm::Discretization discretization = ssm::Discretization::simplified;
    bool local_enhance = true;        // false removes every LoE
    bool conv_only = false;           // drops all scan blocks and global attention
    bool zero_init_pre_sain = false;  // also zero the input-side SAIN embedder
    std::uint64_t seed = 0;

    static ModelConfig desk() { return {}; }

    static ModelConfig full_scale() {
        ModelConfig c;
        c.channels = 256;
        c.expanded = 512;
        c.state_dim = 16;
        return c;
    }

    /// Smallest configuration used by the gradient audits.
    static ModelConfig tiny() {
        ModelConfig c;
        c.channels = 4;
        c.expanded = 8;
        c.state_dim = 2;
        c.encoder_depth = 1;
        c.groups = 1;
        c.blocks_per_group = 1;
        return c;
    }

    void validate() const {
        if (channels == 0 || expanded == 0 || state_dim == 0)
            fail("config: C, E and N must be positive (C=", channels, ", E=", expanded, ", N=", state_dim, ")");
        if (sconv_kernel % 2 == 0) fail("config: sconv_kernel must be odd, got ", sconv_kernel);
        if (se_reduction == 0) fail("config: se_reduction must be positive");
    }

    std::string serialize() const {
        std::ostringstream os;
        os << "C=" << channels << '\n'
           << "E=" << expanded << '\n'
           << "N=" << state_dim << '\n'
           << "encoder_depth=" << encoder_depth << '\n'
           << "groups=" << groups << '\n'
           << "blocks_per_group=" << blocks_per_group << '\n'
           << "sconv_kernel=" << sconv_kernel << '\n'
           << "se_reduction=" << se_reduction << '\n'
           << "scan_mode=" << to_string(scan_mode) << '\n'
           << "discretization=" << (discretization == ssm::Discretization::zoh ? "zoh" : "simplified") << '\n'
           << "local_enhance=" << local_enhance << '\n'
           << "conv_only=" << conv_only << '\n'
           << "zero_init_pre_sain=" << zero_init_pre_sain << '\n'
           << "seed=" << seed << '\n';
        return os.str();
    }

    /// Applies one key=value setting; unknown keys are errors.
    void set(std::string_view key, std::string_view value) {
        const std::string v(value);
        auto as_size = [&] {
            std::size_t pos = 0;
            unsigned long long n = 0;
            try {
                n = std::stoull(v, &pos);
            } catch (const std::exception&) {
                fail("config: '", key, "' expects an integer, got '", v, "'");
            }
            if (pos != v.size()) fail("config: '", key, "' expects an integer, got '", v, "'");
            return static_cast<std::size_t>(n);
        };
        auto as_bool = [&] {
            if (v == "1" || v == "true") return true;
            if (v == "0" || v == "false") return false;
            fail("config: '", key, "' expects 0/1, got '", v, "'");
        };
        if (key == "C") channels = as_size();
        else if (key == "E") expanded = as_size();
        else if (key == "N") state_dim = as_size();
        else if (key == "encoder_depth") encoder_depth = as_size();
        else if (key == "groups") groups = as_size();
        else if (key == "blocks_per_group") blocks_per_group = as_size();
        else if (key == "sconv_kernel") sconv_kernel = as_size();
        else if (key == "se_reduction") se_reduction = as_size();
        else if (key == "scan_mode") scan_mode = parse_scan_mode(v);
        else if (key == "discretization") {
            if (v == "zoh") discretization = ssm::Discretization::zoh;
            else if (v == "simplified") discretization = ssm::Discretization::simplified;
            else fail("config: discretization must be zoh or simplified, got '", v, "'");
        } else if (key == "local_enhance") local_enhance = as_bool();
        else if (key == "conv_only") conv_only = as_bool();
        else if (key == "zero_init_pre_sain") zero_init_pre_sain = as_bool();
        else if (key == "seed") seed = as_size();
        else fail("config: unknown key '", key, "'");
    }

    /// Parses key=value lines on top of `base` (defaults when omitted). Blank lines and '#' comments are skipped.
    static ModelConfig parse(std::string_view text) { return parse(text, ModelConfig{}); }

    static ModelConfig parse(std::string_view text, ModelConfig base) {
        std::istringstream is{std::string(text)};
        std::string line;
        while (std::getline(is, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty() || line[0] == '#') continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos) fail("config: malformed line '", line, "'");
            base.set(std::string_view(line).substr(0, eq), std::string_view(line).substr(eq + 1));
        }
        base.validate();
        return base;
    }

    bool operator==(const ModelConfig&) const = default;
};

}  // namespace samam
