#include "bagan/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace bagan {

std::int64_t numel(const Shape& shape)
{
    std::int64_t n = 1;
    for (auto d : shape) {
        if (d < 0)
            throw std::invalid_argument("negative dimension in shape " + to_string(shape));
        n *= d;
    }
    return n;
}

std::string to_string(const Shape& shape)
{
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(static_cast<std::size_t>(numel(shape_)), fill)
{
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(values.begin(), values.end())
{
    if (static_cast<std::int64_t>(data_.size()) != numel(shape_))
        throw std::invalid_argument("tensor data size " + std::to_string(data_.size())
                                    + " does not match shape " + to_string(shape_));
}

std::int64_t Tensor::dim(int axis) const
{
    if (axis < 0) axis += rank();
    if (axis < 0 || axis >= rank())
        throw std::out_of_range("axis out of range for shape " + to_string(shape_));
    return shape_[static_cast<std::size_t>(axis)];
}

double Tensor::item() const
{
    if (data_.size() != 1)
        throw std::logic_error("item() on tensor of shape " + to_string(shape_));
    return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const
{
    if (numel(shape) != size())
        throw std::invalid_argument("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    Tensor out = *this;
    out.shape_ = std::move(shape);
    return out;
}

void Tensor::fill(double v)
{
    std::fill(data_.begin(), data_.end(), v);
}

bool Tensor::all_finite() const
{
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor Tensor::slice_rows(std::int64_t begin, std::int64_t end) const
{
    if (rank() == 0 || begin < 0 || end > shape_[0] || begin > end)
        throw std::out_of_range("slice_rows out of range");
    const std::int64_t row = shape_[0] == 0 ? 0 : size() / shape_[0];
    Shape s = shape_;
    s[0] = end - begin;
    Tensor out(s);
    std::copy(data_.begin() + begin * row, data_.begin() + end * row, out.data_.begin());
    return out;
}

Tensor Tensor::gather_rows(std::span<const std::int64_t> rows) const
{
    if (rank() == 0)
        throw std::out_of_range("gather_rows on scalar");
    const std::int64_t row = shape_[0] == 0 ? 0 : size() / shape_[0];
    Shape s = shape_;
    s[0] = static_cast<std::int64_t>(rows.size());
    Tensor out(s);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= shape_[0])
            throw std::out_of_range("gather_rows index out of range");
        std::copy_n(data_.begin() + rows[i] * row, row, out.data_.begin() + static_cast<std::int64_t>(i) * row);
    }
    return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b)
{
    if (a.shape() != b.shape())
        throw std::invalid_argument("max_abs_diff shape mismatch " + to_string(a.shape()) + " vs "
                                    + to_string(b.shape()));
    double m = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

} // namespace bagan
