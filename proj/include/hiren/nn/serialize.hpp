#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "hiren/errors.hpp"
#include "hiren/nn/graph.hpp"
#include "hiren/nn/rng.hpp"

namespace hiren::nn {

// Weight blob: "HRNW0001", u32 entry count, then per entry
// u32 name_len + bytes, u32 rank, i32 dims[rank], f32 payload.
inline constexpr char kWeightMagic[8] = {'H', 'R', 'N', 'W', '0', '0', '0', '1'};

namespace detail {

template <typename V>
void put(std::string& buf, V v) {
    char tmp[sizeof(V)];
    std::memcpy(tmp, &v, sizeof(V));
    buf.append(tmp, sizeof(V));
}

template <typename V>
V take(const std::string& buf, size_t& pos) {
    if (pos + sizeof(V) > buf.size()) throw ParseError("weight blob truncated");
    V v;
    std::memcpy(&v, buf.data() + pos, sizeof(V));
    pos += sizeof(V);
    return v;
}

}  // namespace detail

template <typename T>
std::string serialize_params(const std::vector<Parameter<T>*>& params) {
    std::string buf(kWeightMagic, sizeof(kWeightMagic));
    detail::put<uint32_t>(buf, static_cast<uint32_t>(params.size()));
    for (const Parameter<T>* p : params) {
        detail::put<uint32_t>(buf, static_cast<uint32_t>(p->name.size()));
        buf.append(p->name);
        detail::put<uint32_t>(buf, static_cast<uint32_t>(p->value.rank()));
        for (int d : p->value.shape()) detail::put<int32_t>(buf, d);
        for (int64_t i = 0; i < p->value.size(); ++i)
            detail::put<float>(buf, static_cast<float>(p->value[i]));
    }
    return buf;
}

// Restores values into an already-constructed parameter list; names and
// shapes must match exactly (same model topology).
template <typename T>
void deserialize_params(const std::string& buf, const std::vector<Parameter<T>*>& params) {
    if (buf.size() < sizeof(kWeightMagic) || std::memcmp(buf.data(), kWeightMagic, sizeof(kWeightMagic)) != 0)
        throw ParseError("weight blob: bad magic");
    size_t pos = sizeof(kWeightMagic);
    uint32_t count = detail::take<uint32_t>(buf, pos);
    if (count != params.size())
        throw ParseError("weight blob holds " + std::to_string(count) + " tensors, model expects " +
                         std::to_string(params.size()));
    for (Parameter<T>* p : params) {
        uint32_t nlen = detail::take<uint32_t>(buf, pos);
        if (pos + nlen > buf.size()) throw ParseError("weight blob truncated");
        std::string name(buf.data() + pos, nlen);
        pos += nlen;
        if (name != p->name)
            throw ParseError("weight blob tensor '" + name + "' does not match model parameter '" +
                             p->name + "'");
        uint32_t rank = detail::take<uint32_t>(buf, pos);
        std::vector<int> shape(rank);
        for (uint32_t i = 0; i < rank; ++i) shape[i] = detail::take<int32_t>(buf, pos);
        if (shape != p->value.shape())
            throw ParseError("weight blob tensor '" + name + "' has unexpected shape");
        for (int64_t i = 0; i < p->value.size(); ++i)
            p->value[i] = static_cast<T>(detail::take<float>(buf, pos));
    }
    if (pos != buf.size()) throw ParseError("weight blob has trailing bytes");
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("short write to " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    std::ostringstream os;
    os << f.rdbuf();
    if (f.bad()) throw IoError("read failed on " + path.string());
    return os.str();
}

inline std::string hash_hex(const std::string& bytes) {
    uint64_t h = fnv1a64(bytes.data(), bytes.size());
    std::ostringstream os;
    os << "0x" << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

}  // namespace hiren::nn
