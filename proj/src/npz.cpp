#include "bagan/npz.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little, "npz I/O assumes a little-endian host");

namespace bagan::npz {

namespace {

constexpr std::uint32_t kLocalSig = 0x04034b50;
constexpr std::uint32_t kCentralSig = 0x02014b50;
constexpr std::uint32_t kEndSig = 0x06054b50;
constexpr std::uint32_t kZip64EndSig = 0x06064b50;
constexpr std::uint32_t kZip64LocatorSig = 0x07064b50;

template <class T>
void put(std::vector<std::uint8_t>& out, T v)
{
    for (std::size_t i = 0; i < sizeof(T); ++i)
        out.push_back(static_cast<std::uint8_t>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

template <class T>
T get(std::span<const std::uint8_t> buf, std::size_t off)
{
    if (off + sizeof(T) > buf.size())
        throw std::runtime_error("npz: truncated archive");
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
        v |= static_cast<std::uint64_t>(buf[off + i]) << (8 * i);
    return static_cast<T>(v);
}

DType parse_descr(const std::string& d)
{
    if (d == "|u1" || d == "<u1") return DType::U8;
    if (d == "<i4") return DType::I32;
    if (d == "<i8") return DType::I64;
    if (d == "<f4") return DType::F32;
    if (d == "<f8") return DType::F64;
    throw std::runtime_error("npz: unsupported dtype '" + d + "'");
}

std::string header_value(const std::string& header, const std::string& key)
{
    const auto k = header.find("'" + key + "'");
    if (k == std::string::npos)
        throw std::runtime_error("npz: header missing key '" + key + "'");
    auto p = header.find(':', k);
    if (p == std::string::npos)
        throw std::runtime_error("npz: malformed header");
    ++p;
    while (p < header.size() && header[p] == ' ')
        ++p;
    if (p >= header.size())
        throw std::runtime_error("npz: malformed header");
    if (header[p] == '\'') {
        const auto e = header.find('\'', p + 1);
        return header.substr(p + 1, e - p - 1);
    }
    if (header[p] == '(') {
        const auto e = header.find(')', p);
        return header.substr(p + 1, e - p - 1);
    }
    const auto e = header.find_first_of(",}", p);
    return header.substr(p, e - p);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("npz: cannot open " + path.string());
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

std::vector<std::uint8_t> inflate_raw(std::span<const std::uint8_t> src, std::size_t expected)
{
    std::vector<std::uint8_t> out(expected);
    z_stream zs{};
    if (inflateInit2(&zs, -MAX_WBITS) != Z_OK)
        throw std::runtime_error("npz: inflateInit2 failed");
    zs.next_in = const_cast<Bytef*>(src.data());
    zs.avail_in = static_cast<uInt>(src.size());
    zs.next_out = out.data();
    zs.avail_out = static_cast<uInt>(out.size());
    const int rc = inflate(&zs, Z_FINISH);
    inflateEnd(&zs);
    if (rc != Z_STREAM_END || zs.total_out != expected)
        throw std::runtime_error("npz: corrupt deflate stream");
    return out;
}

template <class T>
std::vector<double> widen(const std::vector<std::uint8_t>& raw)
{
    std::vector<double> out(raw.size() / sizeof(T));
    for (std::size_t i = 0; i < out.size(); ++i) {
        T v;
        std::memcpy(&v, raw.data() + i * sizeof(T), sizeof(T));
        out[i] = static_cast<double>(v);
    }
    return out;
}

} // namespace

std::string descr(DType t)
{
    switch (t) {
    case DType::U8: return "|u1";
    case DType::I32: return "<i4";
    case DType::I64: return "<i8";
    case DType::F32: return "<f4";
    case DType::F64: return "<f8";
    }
    return "";
}

std::size_t item_size(DType t)
{
    switch (t) {
    case DType::U8: return 1;
    case DType::I32:
    case DType::F32: return 4;
    case DType::I64:
    case DType::F64: return 8;
    }
    return 0;
}

Array Array::from_tensor(const Tensor& t)
{
    Array a;
    a.dtype = DType::F64;
    a.shape = t.shape();
    a.raw.resize(static_cast<std::size_t>(t.size()) * 8);
    std::memcpy(a.raw.data(), t.data(), a.raw.size());
    return a;
}

Array Array::from_u8(Shape shape, std::span<const std::uint8_t> v)
{
    if (numel(shape) != static_cast<std::int64_t>(v.size()))
        throw std::invalid_argument("npz: u8 data does not match shape");
    return Array{DType::U8, std::move(shape), std::vector<std::uint8_t>(v.begin(), v.end())};
}

Array Array::from_i64(Shape shape, std::span<const std::int64_t> v)
{
    if (numel(shape) != static_cast<std::int64_t>(v.size()))
        throw std::invalid_argument("npz: i64 data does not match shape");
    Array a{DType::I64, std::move(shape), {}};
    a.raw.resize(v.size() * 8);
    std::memcpy(a.raw.data(), v.data(), a.raw.size());
    return a;
}

std::vector<double> Array::to_doubles() const
{
    switch (dtype) {
    case DType::U8: return widen<std::uint8_t>(raw);
    case DType::I32: return widen<std::int32_t>(raw);
    case DType::I64: return widen<std::int64_t>(raw);
    case DType::F32: return widen<float>(raw);
    case DType::F64: return widen<double>(raw);
    }
    return {};
}

std::vector<std::int64_t> Array::to_int64() const
{
    const auto d = to_doubles();
    std::vector<std::int64_t> out(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (d[i] != static_cast<double>(static_cast<std::int64_t>(d[i])))
            throw std::runtime_error("npz: non-integer value in integer conversion");
        out[i] = static_cast<std::int64_t>(d[i]);
    }
    return out;
}

std::vector<std::uint8_t> Array::to_u8() const
{
    if (dtype == DType::U8)
        return raw;
    const auto d = to_doubles();
    std::vector<std::uint8_t> out(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (d[i] < 0 || d[i] > 255 || d[i] != static_cast<double>(static_cast<int>(d[i])))
            throw std::runtime_error("npz: value out of uint8 range");
        out[i] = static_cast<std::uint8_t>(d[i]);
    }
    return out;
}

void Archive::add(std::string name, Array a)
{
    if (contains(name))
        throw std::invalid_argument("npz: duplicate array name '" + name + "'");
    if (static_cast<std::size_t>(a.size()) * item_size(a.dtype) != a.raw.size())
        throw std::invalid_argument("npz: array '" + name + "' byte size does not match its shape");
    entries_.emplace_back(std::move(name), std::move(a));
}

bool Archive::contains(const std::string& name) const
{
    return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == name; });
}

const Array& Archive::at(const std::string& name) const
{
    for (const auto& [n, a] : entries_)
        if (n == name)
            return a;
    throw std::out_of_range("npz: no array named '" + name + "'");
}

std::vector<std::uint8_t> encode_npy(const Array& a)
{
    std::string shape;
    for (std::size_t i = 0; i < a.shape.size(); ++i)
        shape += std::to_string(a.shape[i]) + (a.shape.size() == 1 ? "," : (i + 1 < a.shape.size() ? ", " : ""));
    std::string header = "{'descr': '" + descr(a.dtype) + "', 'fortran_order': False, 'shape': (" + shape + "), }";
    const std::size_t unpadded = 10 + header.size() + 1;
    header.append((64 - unpadded % 64) % 64, ' ');
    header.push_back('\n');

    std::vector<std::uint8_t> out{0x93, 'N', 'U', 'M', 'P', 'Y', 1, 0};
    put<std::uint16_t>(out, static_cast<std::uint16_t>(header.size()));
    out.insert(out.end(), header.begin(), header.end());
    out.insert(out.end(), a.raw.begin(), a.raw.end());
    return out;
}

Array decode_npy(std::span<const std::uint8_t> bytes)
{
    static const std::uint8_t magic[6] = {0x93, 'N', 'U', 'M', 'P', 'Y'};
    if (bytes.size() < 10 || !std::equal(magic, magic + 6, bytes.begin()))
        throw std::runtime_error("npz: member is not an .npy payload");
    const int major = bytes[6];
    std::size_t header_len = 0;
    std::size_t start = 0;
    if (major == 1) {
        header_len = get<std::uint16_t>(bytes, 8);
        start = 10;
    } else {
        header_len = get<std::uint32_t>(bytes, 8);
        start = 12;
    }
    if (start + header_len > bytes.size())
        throw std::runtime_error("npz: truncated .npy header");
    const std::string header(bytes.begin() + static_cast<std::ptrdiff_t>(start),
                             bytes.begin() + static_cast<std::ptrdiff_t>(start + header_len));
    Array a;
    a.dtype = parse_descr(header_value(header, "descr"));
    if (header_value(header, "fortran_order").find("True") != std::string::npos)
        throw std::runtime_error("npz: Fortran-ordered arrays are not supported");
    const std::string dims = header_value(header, "shape");
    std::size_t p = 0;
    while (p < dims.size()) {
        while (p < dims.size() && (dims[p] == ' ' || dims[p] == ','))
            ++p;
        if (p >= dims.size())
            break;
        std::size_t used = 0;
        a.shape.push_back(std::stoll(dims.substr(p), &used));
        p += used;
    }
    const std::size_t nbytes = static_cast<std::size_t>(numel(a.shape)) * item_size(a.dtype);
    const std::size_t data_start = start + header_len;
    if (data_start + nbytes > bytes.size())
        throw std::runtime_error("npz: truncated .npy data");
    a.raw.assign(bytes.begin() + static_cast<std::ptrdiff_t>(data_start),
                 bytes.begin() + static_cast<std::ptrdiff_t>(data_start + nbytes));
    return a;
}

void save(const std::filesystem::path& path, const Archive& archive)
{
    std::vector<std::uint8_t> out;
    std::vector<std::uint8_t> central;
    constexpr std::uint16_t kDosDate = (0 << 9) | (1 << 5) | 1;  // 1980-01-01
    for (const auto& [name, array] : archive.entries()) {
        const std::string member = name + ".npy";
        const std::vector<std::uint8_t> payload = encode_npy(array);
        if (payload.size() >= 0xffffffffULL || out.size() >= 0xffffffffULL)
            throw std::runtime_error("npz: archives over 4 GiB are not supported for writing");
        const auto crc = static_cast<std::uint32_t>(crc32(0L, payload.data(), static_cast<uInt>(payload.size())));
        const auto offset = static_cast<std::uint32_t>(out.size());
        const auto size = static_cast<std::uint32_t>(payload.size());

        put<std::uint32_t>(out, kLocalSig);
        put<std::uint16_t>(out, 20);
        put<std::uint16_t>(out, 0);
        put<std::uint16_t>(out, 0);
        put<std::uint16_t>(out, 0);
        put<std::uint16_t>(out, kDosDate);
        put<std::uint32_t>(out, crc);
        put<std::uint32_t>(out, size);
        put<std::uint32_t>(out, size);
        put<std::uint16_t>(out, static_cast<std::uint16_t>(member.size()));
        put<std::uint16_t>(out, 0);
        out.insert(out.end(), member.begin(), member.end());
        out.insert(out.end(), payload.begin(), payload.end());

        put<std::uint32_t>(central, kCentralSig);
        put<std::uint16_t>(central, 20);
        put<std::uint16_t>(central, 20);
        put<std::uint16_t>(central, 0);
        put<std::uint16_t>(central, 0);
        put<std::uint16_t>(central, 0);
        put<std::uint16_t>(central, kDosDate);
        put<std::uint32_t>(central, crc);
        put<std::uint32_t>(central, size);
        put<std::uint32_t>(central, size);
        put<std::uint16_t>(central, static_cast<std::uint16_t>(member.size()));
        put<std::uint16_t>(central, 0);
        put<std::uint16_t>(central, 0);
        put<std::uint16_t>(central, 0);
        put<std::uint16_t>(central, 0);
        put<std::uint32_t>(central, 0);
        put<std::uint32_t>(central, offset);
        central.insert(central.end(), member.begin(), member.end());
    }
    const auto cd_offset = static_cast<std::uint32_t>(out.size());
    out.insert(out.end(), central.begin(), central.end());
    put<std::uint32_t>(out, kEndSig);
    put<std::uint16_t>(out, 0);
    put<std::uint16_t>(out, 0);
    put<std::uint16_t>(out, static_cast<std::uint16_t>(archive.entries().size()));
    put<std::uint16_t>(out, static_cast<std::uint16_t>(archive.entries().size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(central.size()));
    put<std::uint32_t>(out, cd_offset);
    put<std::uint16_t>(out, 0);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f)
        throw std::runtime_error("npz: cannot write " + path.string());
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f)
        throw std::runtime_error("npz: write failed for " + path.string());
}

Archive load(const std::filesystem::path& path)
{
    const std::vector<std::uint8_t> buf = read_file(path);
    const std::span<const std::uint8_t> bytes(buf);
    if (buf.size() < 22)
        throw std::runtime_error("npz: " + path.string() + " is not a zip archive");

    std::size_t eocd = std::string::npos;
    const std::size_t lowest = buf.size() > 22 + 65535 ? buf.size() - 22 - 65535 : 0;
    for (std::size_t p = buf.size() - 22 + 1; p-- > lowest;)
        if (get<std::uint32_t>(bytes, p) == kEndSig) {
            eocd = p;
            break;
        }
    if (eocd == std::string::npos)
        throw std::runtime_error("npz: " + path.string() + " has no zip directory");

    std::uint64_t entries = get<std::uint16_t>(bytes, eocd + 10);
    std::uint64_t cd_offset = get<std::uint32_t>(bytes, eocd + 16);
    if ((entries == 0xffff || cd_offset == 0xffffffff) && eocd >= 20
        && get<std::uint32_t>(bytes, eocd - 20) == kZip64LocatorSig) {
        const auto z64 = get<std::uint64_t>(bytes, eocd - 20 + 8);
        if (get<std::uint32_t>(bytes, z64) != kZip64EndSig)
            throw std::runtime_error("npz: bad zip64 end record");
        entries = get<std::uint64_t>(bytes, z64 + 32);
        cd_offset = get<std::uint64_t>(bytes, z64 + 48);
    }

    Archive archive;
    std::size_t p = cd_offset;
    for (std::uint64_t i = 0; i < entries; ++i) {
        if (get<std::uint32_t>(bytes, p) != kCentralSig)
            throw std::runtime_error("npz: corrupt central directory");
        const auto method = get<std::uint16_t>(bytes, p + 10);
        std::uint64_t csize = get<std::uint32_t>(bytes, p + 20);
        std::uint64_t usize = get<std::uint32_t>(bytes, p + 24);
        const auto name_len = get<std::uint16_t>(bytes, p + 28);
        const auto extra_len = get<std::uint16_t>(bytes, p + 30);
        const auto comment_len = get<std::uint16_t>(bytes, p + 32);
        std::uint64_t local = get<std::uint32_t>(bytes, p + 42);
        std::string name(buf.begin() + static_cast<std::ptrdiff_t>(p + 46),
                         buf.begin() + static_cast<std::ptrdiff_t>(p + 46 + name_len));
        // zip64 extended information, present only for saturated fields.
        std::size_t e = p + 46 + name_len;
        const std::size_t e_end = e + extra_len;
        while (e + 4 <= e_end) {
            const auto id = get<std::uint16_t>(bytes, e);
            const auto len = get<std::uint16_t>(bytes, e + 2);
            if (id == 0x0001) {
                std::size_t q = e + 4;
                if (usize == 0xffffffff) { usize = get<std::uint64_t>(bytes, q); q += 8; }
                if (csize == 0xffffffff) { csize = get<std::uint64_t>(bytes, q); q += 8; }
                if (local == 0xffffffff) { local = get<std::uint64_t>(bytes, q); }
            }
            e += 4 + len;
        }
        p = e_end + comment_len;

        if (get<std::uint32_t>(bytes, local) != kLocalSig)
            throw std::runtime_error("npz: corrupt local header for " + name);
        const std::size_t data = local + 30 + get<std::uint16_t>(bytes, local + 26) + get<std::uint16_t>(bytes, local + 28);
        if (data + csize > buf.size())
            throw std::runtime_error("npz: truncated member " + name);
        const auto member = bytes.subspan(data, csize);
        std::vector<std::uint8_t> payload;
        if (method == 0)
            payload.assign(member.begin(), member.end());
        else if (method == 8)
            payload = inflate_raw(member, usize);
        else
            throw std::runtime_error("npz: unsupported compression method in " + name);

        if (name.size() > 4 && name.ends_with(".npy"))
            name.resize(name.size() - 4);
        archive.add(name, decode_npy(payload));
    }
    return archive;
}

} // namespace bagan::npz
