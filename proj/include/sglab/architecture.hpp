#pragma once

#include <optional>
#include <string>

#include "sglab/nets.hpp"

namespace sglab {

/// Everything needed to rebuild a variant's generator and discriminator specs.
struct Architecture {
    Variant variant = Variant::sigan;
    int lr_size = 8;
    std::optional<int> num_identities;  // required by giegan and diegan
    GeneratorOptions generator_options;
    DiscriminatorOptions discriminator_options;

    int hr_size() const { return lr_size * kUpscaleFactor; }
    ModelSpec generator() const;
    /// sigan: real/fake on RGB; giegan: real/fake on RGB + label plane;
    /// diegan: C+1-way classifier on RGB.
    ModelSpec discriminator() const;

    /// Sorted key=value lines; parse(to_text()) == *this.
    std::string to_text() const;
    static Architecture parse(const std::string& text);

    friend bool operator==(const Architecture&, const Architecture&);
};

/// Normalized GieGAN identity value id / max(C-1, 1).
double normalized_label(int identity, int num_identities);

}  // namespace sglab
