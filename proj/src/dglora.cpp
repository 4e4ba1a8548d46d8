#include "dgsr/dglora.hpp"

namespace dgsr::dglora {

std::string to_string(Surface s) {
    switch (s) {
    case Surface::Encoder: return "encoder";
    case Surface::Unet: return "unet";
    case Surface::Decoder: return "decoder";
    }
    return "unet";
}

Surface parse_surface(const std::string& name) {
    if (name == "encoder") return Surface::Encoder;
    if (name == "unet") return Surface::Unet;
    if (name == "decoder") return Surface::Decoder;
    throw InputError("unknown adaptation surface '" + name + "' (expected encoder, unet or decoder)");
}

std::string to_string(ModulationMode m) {
    switch (m) {
    case ModulationMode::PerBlock: return "per_block";
    case ModulationMode::Shared: return "shared";
    case ModulationMode::Vanilla: return "vanilla";
    }
    return "per_block";
}

ModulationMode parse_mode(const std::string& name) {
    if (name == "per_block") return ModulationMode::PerBlock;
    if (name == "shared") return ModulationMode::Shared;
    if (name == "vanilla") return ModulationMode::Vanilla;
    throw InputError("unknown modulation mode '" + name + "' (expected per_block, shared or vanilla)");
}

} // namespace dgsr::dglora
