#include "bagan/dataset.hpp"

#include "bagan/errors.hpp"
#include "bagan/npz.hpp"
#include "bagan/rng.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace bagan {

namespace fs = std::filesystem;

ImageBatch::ImageBatch(std::int64_t n_, std::int64_t h_, std::int64_t w_, std::int64_t c_, RangeTag r)
    : n(n_), h(h_), w(w_), c(c_), range(r), data(static_cast<std::size_t>(n_ * h_ * w_ * c_))
{
}

std::span<const float> ImageBatch::image(std::int64_t i) const
{
    return std::span<const float>(data).subspan(static_cast<std::size_t>(i * image_size()),
                                                static_cast<std::size_t>(image_size()));
}

std::span<float> ImageBatch::image(std::int64_t i)
{
    return std::span<float>(data).subspan(static_cast<std::size_t>(i * image_size()),
                                          static_cast<std::size_t>(image_size()));
}

ImageBatch ImageBatch::gather(std::span<const std::int64_t> idx) const
{
    ImageBatch out(static_cast<std::int64_t>(idx.size()), h, w, c, range);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        auto src = image(idx[i]);
        std::copy(src.begin(), src.end(), out.image(static_cast<std::int64_t>(i)).begin());
    }
    return out;
}

Tensor ImageBatch::to_tensor(std::span<const std::int64_t> idx) const
{
    const std::int64_t count = idx.empty() ? n : static_cast<std::int64_t>(idx.size());
    Tensor t({count, h, w, c});
    double* dst = t.data();
    for (std::int64_t i = 0; i < count; ++i) {
        auto src = image(idx.empty() ? i : idx[static_cast<std::size_t>(i)]);
        std::copy(src.begin(), src.end(), dst + i * image_size());
    }
    return t;
}

ImageBatch ImageBatch::from_tensor(const Tensor& t, RangeTag range)
{
    if (t.rank() != 4)
        throw ShapeMismatch("image tensor must be rank 4, got " + to_string(t.shape()));
    ImageBatch out(t.dim(0), t.dim(1), t.dim(2), t.dim(3), range);
    std::transform(t.values().begin(), t.values().end(), out.data.begin(),
                   [](double v) { return static_cast<float>(v); });
    return out;
}

LabelBatch LabelBatch::gather(std::span<const std::int64_t> idx) const
{
    LabelBatch out{{}, num_classes};
    out.labels.reserve(idx.size());
    for (auto i : idx)
        out.labels.push_back(labels[static_cast<std::size_t>(i)]);
    return out;
}

std::vector<std::int64_t> LabelBatch::counts() const
{
    std::vector<std::int64_t> out(static_cast<std::size_t>(num_classes), 0);
    for (int l : labels)
        ++out[static_cast<std::size_t>(l)];
    return out;
}

std::vector<std::int64_t> LabelBatch::indices_of(int k) const
{
    std::vector<std::int64_t> out;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == k)
            out.push_back(static_cast<std::int64_t>(i));
    return out;
}

// ---------------------------------------------------------------------------

namespace {

bool is_image_file(const fs::path& p)
{
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp";
}

cv::Mat resize_mat(const cv::Mat& m, std::int64_t h, std::int64_t w)
{
    if (m.rows == h && m.cols == w)
        return m;
    cv::Mat out;
    cv::resize(m, out, cv::Size(static_cast<int>(w), static_cast<int>(h)), 0, 0, cv::INTER_LINEAR);
    return out;
}

void check_class_names(const std::vector<std::string>& expected, const std::vector<std::string>& found)
{
    if (!expected.empty() && expected != found)
        throw LabelMismatch("configured class names do not match the class folders");
}

std::pair<ImageBatch, LabelBatch> load_folder(const DatasetSpec& spec)
{
    const auto classes = folder_class_names(spec.source);
    check_class_names(spec.class_names, classes);

    std::vector<std::pair<fs::path, int>> files;
    for (std::size_t k = 0; k < classes.size(); ++k) {
        std::vector<fs::path> in_class;
        for (const auto& e : fs::directory_iterator(spec.source / classes[k]))
            if (e.is_regular_file() && is_image_file(e.path()))
                in_class.push_back(e.path());
        std::sort(in_class.begin(), in_class.end());
        for (auto& p : in_class)
            files.emplace_back(std::move(p), static_cast<int>(k));
    }
    if (files.empty())
        throw MissingSource(spec.source.string() + " contains no images");

    const auto [h, w, c] = spec.image_shape;
    ImageBatch images(static_cast<std::int64_t>(files.size()), h, w, c, RangeTag::Raw0To255);
    LabelBatch labels{{}, static_cast<int>(classes.size())};
    for (std::size_t i = 0; i < files.size(); ++i) {
        cv::Mat m = cv::imread(files[i].first.string(), c == 1 ? cv::IMREAD_GRAYSCALE : cv::IMREAD_COLOR);
        if (m.empty())
            throw UndecodableImage(files[i].first.string());
        if (c == 3)
            cv::cvtColor(m, m, cv::COLOR_BGR2RGB);
        m = resize_mat(m, h, w);
        auto dst = images.image(static_cast<std::int64_t>(i));
        for (int y = 0; y < h; ++y) {
            const std::uint8_t* row = m.ptr<std::uint8_t>(y);
            std::copy(row, row + w * c, dst.begin() + y * w * c);
        }
        labels.labels.push_back(files[i].second);
    }
    return {std::move(images), std::move(labels)};
}

std::pair<ImageBatch, LabelBatch> load_container(const DatasetSpec& spec)
{
    npz::Archive a;
    try {
        a = npz::load(spec.source);
    } catch (const std::runtime_error& e) {
        throw MissingSource(spec.source.string() + ": " + e.what());
    }
    if (!a.contains("images") || !a.contains("labels"))
        throw MissingSource(spec.source.string() + " lacks an 'images' or 'labels' array");
    const auto& im = a.at("images");
    const auto lab = a.at("labels").to_int64();
    if (im.shape.size() != 3 && im.shape.size() != 4)
        throw UndecodableImage(spec.source.string() + ": images must be NxHxW or NxHxWxC");
    const std::int64_t n = im.shape[0];
    if (n == 0)
        throw MissingSource(spec.source.string() + " contains no images");
    if (static_cast<std::int64_t>(lab.size()) != n)
        throw LabelMismatch(std::to_string(n) + " images but " + std::to_string(lab.size()) + " labels");

    const std::int64_t sh = im.shape[1], sw = im.shape[2], sc = im.shape.size() == 4 ? im.shape[3] : 1;
    const auto [h, w, c] = spec.image_shape;
    if (sc != c)
        throw UndecodableImage(spec.source.string() + ": stored channel count " + std::to_string(sc)
                               + " does not match configured " + std::to_string(c));
    const auto pixels = im.to_u8();

    int num_classes = static_cast<int>(spec.class_names.size());
    if (num_classes == 0)
        num_classes = static_cast<int>(*std::max_element(lab.begin(), lab.end()) + 1);
    LabelBatch labels{{}, num_classes};
    for (auto l : lab) {
        if (l < 0 || l >= num_classes)
            throw LabelMismatch("label " + std::to_string(l) + " outside [0, " + std::to_string(num_classes) + ")");
        labels.labels.push_back(static_cast<int>(l));
    }

    ImageBatch images(n, h, w, c, RangeTag::Raw0To255);
    const int type = CV_8UC(static_cast<int>(c));
    for (std::int64_t i = 0; i < n; ++i) {
        cv::Mat m(static_cast<int>(sh), static_cast<int>(sw), type,
                  const_cast<std::uint8_t*>(pixels.data() + i * sh * sw * sc));
        cv::Mat r = resize_mat(m, h, w);
        if (!r.isContinuous())
            r = r.clone();
        std::copy(r.data, r.data + h * w * c, images.image(i).begin());
    }
    return {std::move(images), std::move(labels)};
}

} // namespace

std::vector<std::string> folder_class_names(const fs::path& root)
{
    std::vector<std::string> out;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory())
            out.push_back(e.path().filename().string());
    std::sort(out.begin(), out.end());
    return out;
}

std::pair<ImageBatch, LabelBatch> load_dataset(const DatasetSpec& spec)
{
    if (spec.source.empty() || !fs::exists(spec.source))
        throw MissingSource("no such path: " + spec.source.string());
    const auto [h, w, c] = spec.image_shape;
    if (h < 1 || w < 1 || (c != 1 && c != 3))
        throw InvalidConfig("image_shape must be positive with 1 or 3 channels");

    auto out = fs::is_directory(spec.source) ? load_folder(spec) : load_container(spec);
    if (out.second.num_classes < 2)
        throw LabelMismatch(spec.source.string() + " yields fewer than 2 classes");
    return out;
}

std::pair<ImageBatch, LabelBatch> apply_schedule(const ImageBatch& images, const LabelBatch& labels,
                                                 const ImbalanceSchedule& sched)
{
    if (images.n != labels.size())
        throw LabelMismatch(std::to_string(images.n) + " images but " + std::to_string(labels.size()) + " labels");
    Rng rng(sched.seed);
    std::vector<std::int64_t> keep;
    for (const auto& [k, target] : sched.per_class_target) {
        if (k < 0 || k >= labels.num_classes)
            throw InvalidSchedule("class " + std::to_string(k) + " outside [0, " + std::to_string(labels.num_classes)
                                  + ")");
        auto idx = labels.indices_of(k);
        const auto available = static_cast<std::int64_t>(idx.size());
        if (target < 1 || target > available)
            throw TargetExceedsAvailable(k, target, available);
        // Partial Fisher-Yates: the first `target` slots become a uniform sample.
        for (std::int64_t i = 0; i < target; ++i) {
            const auto j = i + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(available - i)));
            std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
        }
        keep.insert(keep.end(), idx.begin(), idx.begin() + target);
    }
    std::sort(keep.begin(), keep.end());
    return {images.gather(keep), labels.gather(keep)};
}

ImageBatch resize_bilinear(const ImageBatch& images, std::int64_t h, std::int64_t w)
{
    if (images.h == h && images.w == w)
        return images;
    ImageBatch out(images.n, h, w, images.c, images.range);
    const int type = CV_32FC(static_cast<int>(images.c));
    for (std::int64_t i = 0; i < images.n; ++i) {
        cv::Mat src(static_cast<int>(images.h), static_cast<int>(images.w), type,
                    const_cast<float*>(images.image(i).data()));
        cv::Mat dst(static_cast<int>(h), static_cast<int>(w), type, out.image(i).data());
        cv::resize(src, dst, dst.size(), 0, 0, cv::INTER_LINEAR);
    }
    return out;
}

ImageBatch preprocess(const ImageBatch& raw)
{
    if (raw.range != RangeTag::Raw0To255)
        throw AlreadyScaled("batch is already in [-1, 1]");
    if (raw.n < 1)
        throw MissingSource("empty image batch");
    ImageBatch out = resize_bilinear(raw, kImageSize, kImageSize);
    for (float& v : out.data)
        v = static_cast<float>(std::clamp(static_cast<double>(v) / 127.5 - 1.0, -1.0, 1.0));
    out.range = RangeTag::ScaledMinus1To1;
    return out;
}

ImageBatch to_raw(const ImageBatch& scaled)
{
    ImageBatch out = scaled;
    for (float& v : out.data)
        v = static_cast<float>(std::clamp(std::round((static_cast<double>(v) + 1.0) * 127.5), 0.0, 255.0));
    out.range = RangeTag::Raw0To255;
    return out;
}

// ---------------------------------------------------------------------------

namespace {

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos)
        return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::int64_t parse_int(const std::string& s, const std::string& where)
{
    std::size_t used = 0;
    std::int64_t v = 0;
    try {
        v = std::stoll(s, &used);
    } catch (const std::logic_error&) {
        throw InvalidSchedule(where + ": '" + s + "' is not an integer");
    }
    if (used != s.size())
        throw InvalidSchedule(where + ": '" + s + "' is not an integer");
    return v;
}

} // namespace

ImbalanceSchedule read_schedule(const fs::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw InvalidSchedule("cannot open " + path.string());
    ImbalanceSchedule s;
    bool have_seed = false;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string where = path.string() + ":" + std::to_string(lineno);
        line = trim(line.substr(0, line.find('#')));
        if (line.empty())
            continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw InvalidSchedule(where + ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::int64_t value = parse_int(trim(line.substr(eq + 1)), where);
        if (key == "seed") {
            if (value < 0)
                throw InvalidSchedule(where + ": seed must be non-negative");
            s.seed = static_cast<std::uint64_t>(value);
            have_seed = true;
            continue;
        }
        const auto k = parse_int(key, where);
        if (k < 0)
            throw InvalidSchedule(where + ": negative class index");
        if (value < 1)
            throw InvalidSchedule(where + ": target count must be >= 1");
        if (!s.per_class_target.emplace(static_cast<int>(k), value).second)
            throw InvalidSchedule(where + ": class " + key + " listed twice");
    }
    if (!have_seed)
        throw InvalidSchedule(path.string() + ": missing 'seed = <int>'");
    if (s.per_class_target.empty())
        throw InvalidSchedule(path.string() + ": no class targets");
    return s;
}

void write_schedule(const fs::path& path, const ImbalanceSchedule& sched)
{
    std::ofstream out(path, std::ios::trunc);
    out << "seed = " << sched.seed << "\n";
    for (const auto& [k, v] : sched.per_class_target)
        out << k << " = " << v << "\n";
    if (!out)
        throw std::runtime_error("cannot write " + path.string());
}

std::vector<std::int64_t> shuffled_indices(std::int64_t n, Rng& rng)
{
    std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i)
        idx[static_cast<std::size_t>(i)] = i;
    for (std::int64_t i = n - 1; i > 0; --i)
        std::swap(idx[static_cast<std::size_t>(i)], idx[rng.below(static_cast<std::uint64_t>(i + 1))]);
    return idx;
}

void save_container(const fs::path& path, const ImageBatch& raw, const LabelBatch& labels)
{
    if (raw.range != RangeTag::Raw0To255)
        throw AlreadyScaled("containers store raw 0-255 images");
    if (raw.n != labels.size())
        throw LabelMismatch(std::to_string(raw.n) + " images but " + std::to_string(labels.size()) + " labels");
    std::vector<std::uint8_t> px(raw.data.size());
    std::transform(raw.data.begin(), raw.data.end(), px.begin(),
                   [](float v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); });
    std::vector<std::int64_t> lab(labels.labels.begin(), labels.labels.end());
    npz::Archive a;
    a.add("images", npz::Array::from_u8({raw.n, raw.h, raw.w, raw.c}, px));
    a.add("labels", npz::Array::from_i64({labels.size()}, lab));
    npz::save(path, a);
}

} // namespace bagan
