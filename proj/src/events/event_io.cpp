#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "drfuser/binary_io.hpp"
#include "drfuser/events.hpp"

namespace drfuser::events {

namespace {
constexpr char kMagic[4] = {'D', 'R', 'F', 'E'};
constexpr std::size_t kRecordBytes = 9;
}  // namespace

void write_event_file(const std::filesystem::path& path, const EventStream& stream) {
    stream.validate();
    if (stream.width > 0xFFFF || stream.height > 0xFFFF)
        throw DataError("sensor extents exceed the 16-bit coordinate range");
    ByteWriter w;
    w.bytes(kMagic, 4);
    w.u32(kEventFileVersion);
    w.u32(static_cast<std::uint32_t>(stream.width));
    w.u32(static_cast<std::uint32_t>(stream.height));
    w.u64(stream.events.size());
    for (std::size_t i = 0; i < stream.events.size(); ++i) {
        const auto& e = stream.events[i];
        if (e.t_us > std::numeric_limits<std::uint32_t>::max())
            throw DataError("event " + std::to_string(i) + " timestamp exceeds 32-bit range");
        w.u32(static_cast<std::uint32_t>(e.t_us));
        w.u16(e.x);
        w.u16(e.y);
        w.u8(e.p > 0 ? 1 : 0);
    }
    w.save(path);
}

EventStream read_event_file(const std::filesystem::path& path) {
    auto r = ByteReader::load(path);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) throw DataError(path.string() + ": bad event file magic");
    const auto version = r.u32();
    if (version != kEventFileVersion)
        throw DataError(path.string() + ": unsupported event file version " + std::to_string(version));
    EventStream s;
    s.width = r.u32();
    s.height = r.u32();
    const auto count = r.u64();
    if (r.remaining() != count * kRecordBytes)
        throw DataError(path.string() + ": header declares " + std::to_string(count) +
                        " events but payload holds " + std::to_string(r.remaining()) + " bytes");
    s.events.resize(count);
    for (auto& e : s.events) {
        e.t_us = r.u32();
        e.x = r.u16();
        e.y = r.u16();
        const auto p = r.u8();
        if (p > 1) throw DataError(path.string() + ": invalid polarity byte");
        e.p = p ? 1 : -1;
    }
    s.validate();
    return s;
}

void write_event_csv(const std::filesystem::path& path, const EventStream& stream) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open " + path.string() + " for writing");
    out << "t,x,y,p\n";
    for (const auto& e : stream.events)
        out << e.t_us << ',' << e.x << ',' << e.y << ',' << static_cast<int>(e.p) << '\n';
}

EventStream read_event_csv(const std::filesystem::path& path, std::size_t width,
                           std::size_t height) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    EventStream s;
    s.width = width;
    s.height = height;
    std::string line;
    std::getline(in, line);
    if (line != "t,x,y,p") throw DataError(path.string() + ": expected header t,x,y,p");
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        std::istringstream ls(line);
        long long t;
        int x, y, p;
        char c1, c2, c3;
        if (!(ls >> t >> c1 >> x >> c2 >> y >> c3 >> p) || c1 != ',' || c2 != ',' || c3 != ',' ||
            x < 0 || y < 0 || x > 0xFFFF || y > 0xFFFF)
            throw DataError(path.string() + ": malformed row " + std::to_string(row));
        s.events.push_back({static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y), t,
                            static_cast<std::int8_t>(p)});
    }
    s.validate();
    return s;
}

}  // namespace drfuser::events
