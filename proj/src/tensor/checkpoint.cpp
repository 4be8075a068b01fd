#include "drfuser/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "drfuser/binary_io.hpp"

namespace drfuser {

namespace {
constexpr char kMagic[4] = {'D', 'R', 'F', 'C'};
}

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedArray>& entries) {
    ByteWriter w;
    w.bytes(kMagic, 4);
    w.u32(kCheckpointVersion);
    for (const auto& e : entries) {
        if (shape_numel(e.shape) != e.values.size())
            throw DimensionError("checkpoint entry '" + e.name + "' has shape " +
                                 shape_str(e.shape) + " but " + std::to_string(e.values.size()) +
                                 " values");
        w.u32(static_cast<std::uint32_t>(e.name.size()));
        w.bytes(e.name.data(), e.name.size());
        w.u32(static_cast<std::uint32_t>(e.shape.size()));
        for (auto d : e.shape) w.u32(static_cast<std::uint32_t>(d));
        for (float v : e.values) w.f32(v);
    }
    w.save(path);
}

std::vector<NamedArray> read_checkpoint(const std::filesystem::path& path) {
    ByteReader r = ByteReader::load(path);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw DataError(path.string() + ": not a checkpoint (bad magic)");
    const auto version = r.u32();
    if (version != kCheckpointVersion)
        throw DataError(path.string() + ": unsupported checkpoint version " +
                        std::to_string(version));
    std::vector<NamedArray> out;
    while (!r.at_end()) {
        NamedArray e;
        const auto len = r.u32();
        e.name.resize(len);
        r.bytes(e.name.data(), len);
        const auto rank = r.u32();
        if (rank > 8) throw DataError(path.string() + ": implausible rank for '" + e.name + "'");
        for (std::uint32_t i = 0; i < rank; ++i) e.shape.push_back(r.u32());
        e.values.resize(shape_numel(e.shape));
        for (auto& v : e.values) v = r.f32();
        out.push_back(std::move(e));
    }
    return out;
}

}  // namespace drfuser
