#pragma once

#include "bagan/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

// Named-array containers in NumPy's .npz layout (a zip of .npy members), so
// files written here load with numpy.load and files from numpy.savez /
// numpy.savez_compressed load here.
namespace bagan::npz {

enum class DType { U8, I32, I64, F32, F64 };

std::string descr(DType t);
std::size_t item_size(DType t);

struct Array {
    DType dtype = DType::F64;
    Shape shape;
    std::vector<std::uint8_t> raw;  // little-endian, C order

    static Array from_tensor(const Tensor& t);
    static Array from_u8(Shape shape, std::span<const std::uint8_t> v);
    static Array from_i64(Shape shape, std::span<const std::int64_t> v);

    std::int64_t size() const { return numel(shape); }
    // Converting accessors; any numeric dtype is accepted.
    std::vector<double> to_doubles() const;
    std::vector<std::int64_t> to_int64() const;
    std::vector<std::uint8_t> to_u8() const;
    Tensor to_tensor() const { return Tensor(shape, to_doubles()); }
};

class Archive {
public:
    void add(std::string name, Array a);
    bool contains(const std::string& name) const;
    const Array& at(const std::string& name) const;
    const std::vector<std::pair<std::string, Array>>& entries() const { return entries_; }

private:
    std::vector<std::pair<std::string, Array>> entries_;
};

// Members are stored uncompressed. Throws std::runtime_error on I/O failure.
void save(const std::filesystem::path& path, const Archive& archive);
Archive load(const std::filesystem::path& path);

// Single .npy payload encode/decode.
std::vector<std::uint8_t> encode_npy(const Array& a);
Array decode_npy(std::span<const std::uint8_t> bytes);

} // namespace bagan::npz
