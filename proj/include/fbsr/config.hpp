#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "fbsr/data.hpp"
#include "fbsr/models.hpp"
#include "fbsr/trainer.hpp"

namespace fbsr {

/// Flat "section.key" settings with a fixed registry of known keys. Files use
///
///     [section]
///     key = value   # comment
///
/// Unknown sections or keys and malformed values raise ConfigError.
class RunConfig {
public:
    enum class Type { Int, Double, Bool, String, IntList };

    struct KeyInfo {
        Type type;
        std::string default_value;
        std::string help;
    };

    RunConfig();

    static const std::map<std::string, KeyInfo>& registry();

    void load_file(const std::filesystem::path& path);
    /// "section.key=value".
    void apply_override(const std::string& assignment);
    void set(const std::string& key, const std::string& value);

    [[nodiscard]] long get_int(const std::string& key) const;
    [[nodiscard]] double get_double(const std::string& key) const;
    [[nodiscard]] bool get_bool(const std::string& key) const;
    [[nodiscard]] const std::string& get_string(const std::string& key) const;
    [[nodiscard]] std::vector<int> get_int_list(const std::string& key) const;

    /// Every key with its resolved, typed value, grouped by section.
    [[nodiscard]] nlohmann::json to_json() const;

    [[nodiscard]] GeneratorConfig generator() const;
    [[nodiscard]] DiscriminatorConfig discriminator() const;
    [[nodiscard]] TrainConfig training() const;
    [[nodiscard]] CorpusConfig corpus() const;

private:
    const std::string& raw(const std::string& key, Type expected) const;
    std::map<std::string, std::string> values_;
};

}  // namespace fbsr
