#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "csc/csc_layer.hpp"
#include "csc/networks.hpp"
#include "csc/trainer.hpp"

namespace csc::config {

/// Minimal INI reader: [section] headers, key = value lines, '#' comments.
/// Sections and keys outside the known schema are rejected at resolve time.
class Ini {
public:
    static Ini parse(const std::string& text);
    static Ini parse_file(const std::string& path);

    bool has(const std::string& section, const std::string& key) const;
    std::optional<std::string> get(const std::string& section, const std::string& key) const;
    void set(const std::string& section, const std::string& key, const std::string& value);

    const std::map<std::string, std::map<std::string, std::string>>& sections() const {
        return sections_;
    }

private:
    std::map<std::string, std::map<std::string, std::string>> sections_;
};

/// Synthetic data settings resolved from the [data] section.
struct DataConfig {
    std::string source = "synthetic";  ///< synthetic | cifar
    std::string path;                  ///< cifar batch file
    std::int64_t count = 512;          ///< synthetic sample count
    real_t density = 0.02;
    real_t noise_std = 0.01;
    std::string magnitude = "normal";  ///< normal | uniform
    std::uint64_t data_seed = 1;
};

/// Everything one run needs, with the published training recipe as the
/// defaults (lr 2e-4, beta1 0, beta2 0.9, eps^2 0.5, lambda 0.01,
/// strategy 2) and the desk-scale "toy" stack as the default architecture.
struct RunConfig {
    net::ArchitectureSpec arch = net::ArchitectureSpec::preset("toy");
    FistaConfig fista;
    train::TrainConfig train;
    DataConfig data;

    /// Applies an INI file over the defaults. Unknown sections/keys throw.
    static RunConfig from_ini(const Ini& ini);
    /// Serializes the fully-resolved configuration back to INI text.
    std::string to_ini() const;
};

} // namespace csc::config
