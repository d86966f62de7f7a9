#include "sglab/config.hpp"

#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace sglab {

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    return s.substr(first, s.find_last_not_of(" \t\r") - first + 1);
}

struct Field {
    std::function<void(TrainConfig&, std::string_view)> set;
    std::function<std::string(const TrainConfig&)> show;
};

template <typename N>
N parse_number(std::string_view v) {
    N out{};
    const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || end != v.data() + v.size()) throw std::invalid_argument("not a number");
    return out;
}

template <typename N>
Field number(N TrainConfig::*member, std::function<bool(N)> ok, const char* rule) {
    return {[=](TrainConfig& c, std::string_view v) {
                const N n = parse_number<N>(v);
                if (!ok(n)) throw std::domain_error(rule);
                c.*member = n;
            },
            [=](const TrainConfig& c) { return fmt::format("{}", c.*member); }};
}

Field positive_double(double TrainConfig::*m) { return number<double>(m, [](double v) { return v > 0; }, "must be > 0"); }
Field nonneg_double(double TrainConfig::*m) { return number<double>(m, [](double v) { return v >= 0; }, "must be >= 0"); }
Field unit_double(double TrainConfig::*m, const char* rule) {
    return number<double>(m, [](double v) { return v >= 0 && v < 1; }, rule);
}

template <typename Sub>
Field int_option(Sub TrainConfig::*group, int Sub::*member) {
    return {[=](TrainConfig& c, std::string_view v) {
                const int n = parse_number<int>(v);
                if (n < 1) throw std::domain_error("must be >= 1");
                c.*group.*member = n;
            },
            [=](const TrainConfig& c) { return std::to_string(c.*group.*member); }};
}

Field text(std::string TrainConfig::*m) {
    return {[=](TrainConfig& c, std::string_view v) { c.*m = std::string(v); },
            [=](const TrainConfig& c) { return c.*m; }};
}

const std::map<std::string, Field, std::less<>>& fields() {
    static const std::map<std::string, Field, std::less<>> table{
        {"variant", {[](TrainConfig& c, std::string_view v) { c.variant = parse_variant(v); },
                     [](const TrainConfig& c) { return std::string(to_string(c.variant)); }}},
        {"lr_size", number<int>(&TrainConfig::lr_size, [](int v) { return v >= 4; }, "must be >= 4")},
        {"batch", number<std::size_t>(&TrainConfig::batch, [](std::size_t v) { return v >= 2; }, "must be >= 2")},
        {"iterations", number<std::size_t>(&TrainConfig::iterations, [](std::size_t) { return true; }, "")},
        {"lr_d", positive_double(&TrainConfig::lr_d)},
        {"lr_g", positive_double(&TrainConfig::lr_g)},
        {"lr_c", positive_double(&TrainConfig::lr_c)},
        {"adam_beta1", unit_double(&TrainConfig::adam_beta1, "must lie in [0,1)")},
        {"adam_beta2", unit_double(&TrainConfig::adam_beta2, "must lie in [0,1)")},
        {"adam_eps", positive_double(&TrainConfig::adam_eps)},
        {"margin", positive_double(&TrainConfig::margin)},
        {"gamma", nonneg_double(&TrainConfig::gamma)},
        {"beta", nonneg_double(&TrainConfig::beta)},
        {"lambda_r", nonneg_double(&TrainConfig::lambda_r)},
        {"lambda_c", nonneg_double(&TrainConfig::lambda_c)},
        {"genuine_fraction",
         number<double>(&TrainConfig::genuine_fraction, [](double v) { return v >= 0 && v <= 1; }, "must lie in [0,1]")},
        {"saturating", {[](TrainConfig& c, std::string_view v) {
                            if (v == "true" || v == "1")
                                c.saturating = true;
                            else if (v == "false" || v == "0")
                                c.saturating = false;
                            else
                                throw std::invalid_argument("expected true or false");
                        },
                        [](const TrainConfig& c) { return std::string(c.saturating ? "true" : "false"); }}},
        {"seed", number<std::uint64_t>(&TrainConfig::seed, [](std::uint64_t) { return true; }, "")},
        {"checkpoint_every", number<std::size_t>(&TrainConfig::checkpoint_every, [](std::size_t) { return true; }, "")},
        {"gen_channels", int_option(&TrainConfig::generator, &GeneratorOptions::trunk_channels)},
        {"tail_channels", int_option(&TrainConfig::generator, &GeneratorOptions::tail_channels)},
        {"blocks_before", int_option(&TrainConfig::generator, &GeneratorOptions::blocks_before_upsampling)},
        {"blocks_between", int_option(&TrainConfig::generator, &GeneratorOptions::blocks_between_upsamplers)},
        {"feature_dim", int_option(&TrainConfig::generator, &GeneratorOptions::feature_dim)},
        {"disc_channels", int_option(&TrainConfig::discriminator, &DiscriminatorOptions::base_channels)},
        {"disc_max_channels", int_option(&TrainConfig::discriminator, &DiscriminatorOptions::max_channels)},
        {"data_root", text(&TrainConfig::data_root)},
        {"out_dir", text(&TrainConfig::out_dir)},
    };
    return table;
}

}  // namespace

TrainConfig parse_config_text(std::string_view text, std::vector<std::string>* defaulted) {
    TrainConfig config;
    std::set<std::string, std::less<>> seen;
    std::istringstream in{std::string(text)};
    std::string raw;
    for (std::size_t line_no = 1; std::getline(in, raw); ++line_no) {
        std::string_view line = raw;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos)
            throw ConfigError(fmt::format("expected key=value (line {})", line_no));
        const std::string_view key = trim(line.substr(0, eq));
        const std::string_view value = trim(line.substr(eq + 1));
        const auto it = fields().find(key);
        if (it == fields().end()) throw ConfigError(fmt::format("unknown key '{}' (line {})", key, line_no));
        if (!seen.insert(std::string(key)).second)
            throw ConfigError(fmt::format("duplicate key '{}' (line {})", key, line_no));
        try {
            it->second.set(config, value);
        } catch (const std::domain_error& e) {
            throw ConfigError(fmt::format("{} {} (line {})", key, e.what(), line_no));
        } catch (const std::exception& e) {
            throw ConfigError(fmt::format("invalid value '{}' for key '{}' (line {}): {}", value, key, line_no, e.what()));
        }
    }
    try {
        config.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (defaulted)
        for (const auto& [key, field] : fields())
            if (!seen.count(key)) defaulted->push_back(key + "=" + field.show(config));
    return config;
}

TrainConfig parse_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read config " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    std::vector<std::string> defaulted;
    TrainConfig config = parse_config_text(buf.str(), &defaulted);
    for (const auto& d : defaulted) spdlog::info("default {}", d);
    return config;
}

}  // namespace sglab
