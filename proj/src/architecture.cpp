#include "sglab/architecture.hpp"

#include <algorithm>
#include <map>
#include <sstream>
#include <stdexcept>

namespace sglab {

ModelSpec Architecture::generator() const {
    return build_generator(variant, lr_size, num_identities, generator_options);
}

ModelSpec Architecture::discriminator() const {
    switch (variant) {
    case Variant::sigan:
        return build_discriminator(DiscriminatorKind::realfake, hr_size(), std::nullopt, 3, discriminator_options);
    case Variant::giegan:
        return build_discriminator(DiscriminatorKind::realfake, hr_size(), std::nullopt, 4, discriminator_options);
    case Variant::diegan:
        if (!num_identities) throw std::invalid_argument("diegan needs num_identities");
        return build_discriminator(DiscriminatorKind::multiclass, hr_size(), num_identities, 3,
                                   discriminator_options);
    }
    throw std::invalid_argument("unknown variant");
}

std::string Architecture::to_text() const {
    std::map<std::string, std::string> kv{
        {"variant", std::string(to_string(variant))},
        {"lr_size", std::to_string(lr_size)},
        {"num_identities", num_identities ? std::to_string(*num_identities) : "none"},
        {"gen_channels", std::to_string(generator_options.trunk_channels)},
        {"tail_channels", std::to_string(generator_options.tail_channels)},
        {"blocks_before", std::to_string(generator_options.blocks_before_upsampling)},
        {"blocks_between", std::to_string(generator_options.blocks_between_upsamplers)},
        {"feature_dim", std::to_string(generator_options.feature_dim)},
        {"disc_channels", std::to_string(discriminator_options.base_channels)},
        {"disc_max_channels", std::to_string(discriminator_options.max_channels)},
    };
    std::string out;
    for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
    return out;
}

Architecture Architecture::parse(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("malformed architecture line '" + line + "'");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    auto get = [&](const char* key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end()) throw std::invalid_argument(std::string("architecture is missing '") + key + "'");
        return it->second;
    };
    auto get_int = [&](const char* key) { return std::stoi(get(key)); };
    Architecture a;
    a.variant = parse_variant(get("variant"));
    a.lr_size = get_int("lr_size");
    if (get("num_identities") != "none") a.num_identities = get_int("num_identities");
    a.generator_options.trunk_channels = get_int("gen_channels");
    a.generator_options.tail_channels = get_int("tail_channels");
    a.generator_options.blocks_before_upsampling = get_int("blocks_before");
    a.generator_options.blocks_between_upsamplers = get_int("blocks_between");
    a.generator_options.feature_dim = get_int("feature_dim");
    a.discriminator_options.base_channels = get_int("disc_channels");
    a.discriminator_options.max_channels = get_int("disc_max_channels");
    return a;
}

bool operator==(const Architecture& a, const Architecture& b) { return a.to_text() == b.to_text(); }

double normalized_label(int identity, int num_identities) {
    if (num_identities < 1 || identity < 0 || identity >= num_identities)
        throw std::invalid_argument("label " + std::to_string(identity) + " outside [0, " +
                                    std::to_string(num_identities) + ")");
    return static_cast<double>(identity) / static_cast<double>(std::max(num_identities - 1, 1));
}

}  // namespace sglab
