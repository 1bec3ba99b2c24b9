#include "voxdream/nn/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace voxdream::nn {

namespace {
constexpr char kMagic[4] = {'V', 'D', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t x) {
    unsigned char b[4] = {static_cast<unsigned char>(x), static_cast<unsigned char>(x >> 8),
                          static_cast<unsigned char>(x >> 16), static_cast<unsigned char>(x >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_u64(std::ostream& os, std::uint64_t x) {
    write_u32(os, static_cast<std::uint32_t>(x));
    write_u32(os, static_cast<std::uint32_t>(x >> 32));
}

std::uint64_t read_u64(std::istream& is) {
    const std::uint64_t lo = read_u32(is);
    return lo | (static_cast<std::uint64_t>(read_u32(is)) << 32);
}
}  // namespace

void save_checkpoint(const std::string& path, const std::string& model, std::uint64_t seed,
                     const std::string& config_hash, ParamStore& ps, int bits) {
    if (bits != 32 && bits != 64) throw std::invalid_argument("checkpoint bits must be 32 or 64");
    nlohmann::ordered_json man;
    man["model"] = model;
    man["seed"] = seed;
    man["config_hash"] = config_hash;
    man["bits"] = bits;
    auto params = nlohmann::ordered_json::array();
    for (const auto& p : ps.items) {
        nlohmann::ordered_json e;
        e["name"] = p.name;
        e["shape"] = p.value.shape;
        params.push_back(e);
    }
    man["params"] = params;
    const std::string mstr = man.dump();

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write checkpoint " + path);
    os.write(kMagic, 4);
    write_u32(os, kVersion);
    write_u32(os, static_cast<std::uint32_t>(mstr.size()));
    os.write(mstr.data(), static_cast<std::streamsize>(mstr.size()));
    for (const auto& p : ps.items) {
        for (double d : p.value.v) {
            if (bits == 64) {
                std::uint64_t u;
                std::memcpy(&u, &d, 8);
                write_u64(os, u);
            } else {
                const float f = static_cast<float>(d);
                std::uint32_t u;
                std::memcpy(&u, &f, 4);
                write_u32(os, u);
            }
        }
    }
}

void load_checkpoint(const std::string& path, const std::string& model, ParamStore& ps) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("missing checkpoint " + path);
    char magic[4];
    is.read(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error("bad checkpoint magic in " + path);
    const std::uint32_t version = read_u32(is);
    if (version != kVersion) throw std::runtime_error("unsupported checkpoint version in " + path);
    const std::uint32_t mlen = read_u32(is);
    std::string mstr(mlen, '\0');
    is.read(mstr.data(), mlen);
    const auto man = nlohmann::json::parse(mstr);
    if (man.at("model").get<std::string>() != model)
        throw std::runtime_error("checkpoint " + path + " holds model '" + man.at("model").get<std::string>() +
                                 "', expected '" + model + "'");
    const int bits = man.value("bits", 32);
    const auto& params = man.at("params");
    if (params.size() != ps.items.size())
        throw std::runtime_error("checkpoint param count mismatch in " + path);
    size_t i = 0;
    for (auto& p : ps.items) {
        const auto& e = params[i++];
        if (e.at("name").get<std::string>() != p.name)
            throw std::runtime_error("checkpoint param order mismatch at " + p.name);
        const auto shp = e.at("shape").get<std::vector<int>>();
        if (shp != p.value.shape) throw std::runtime_error("checkpoint shape mismatch at " + p.name);
        for (auto& d : p.value.v) {
            if (bits == 64) {
                const std::uint64_t u = read_u64(is);
                std::memcpy(&d, &u, 8);
            } else {
                const std::uint32_t u = read_u32(is);
                float f;
                std::memcpy(&f, &u, 4);
                d = static_cast<double>(f);
            }
        }
    }
    if (!is) throw std::runtime_error("truncated checkpoint " + path);
}

bool checkpoint_exists(const std::string& path) { return std::filesystem::exists(path); }

}  // namespace voxdream::nn
