#include "csc/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "csc/rng.hpp"

namespace csc::data {

Dataset Dataset::slice(std::int64_t lo, std::int64_t hi) const {
    if (lo < 0 || hi > count() || lo >= hi) throw DimensionError("dataset slice out of range");
    std::vector<std::int64_t> idx;
    for (std::int64_t i = lo; i < hi; ++i) idx.push_back(i);
    Dataset out;
    out.images = gather(idx);
    if (!labels.empty()) {
        out.labels.assign(labels.begin() + lo, labels.begin() + hi);
    }
    return out;
}

Tensor Dataset::gather(const std::vector<std::int64_t>& indices) const {
    if (images.rank() != 4) throw DimensionError("dataset images must be NCHW");
    const std::int64_t per = images.size() / images.dim(0);
    Tensor out({static_cast<std::int64_t>(indices.size()), images.dim(1), images.dim(2),
                images.dim(3)});
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const std::int64_t s = indices[i];
        if (s < 0 || s >= count()) throw DimensionError("dataset gather index out of range");
        std::copy(images.data() + s * per, images.data() + (s + 1) * per,
                  out.data() + static_cast<std::int64_t>(i) * per);
    }
    return out;
}

SyntheticModel SyntheticModel::single_layer(std::int64_t code_channels,
                                            std::int64_t image_channels, std::int64_t kernel,
                                            std::int64_t stride, std::int64_t padding,
                                            std::int64_t code_h, std::int64_t code_w,
                                            std::uint64_t dict_seed) {
    ConvGeometry geom{kernel, stride, padding, image_channels, code_channels};
    Rng rng = Rng::substream(dict_seed, 0x5e11);
    Tensor k = rng.normal_tensor({code_channels, image_channels, kernel, kernel});
    const std::int64_t atom = image_channels * kernel * kernel;
    for (std::int64_t m = 0; m < code_channels; ++m) {
        real_t n2 = 0;
        for (std::int64_t j = 0; j < atom; ++j) n2 += k[m * atom + j] * k[m * atom + j];
        const real_t inv = n2 > 0 ? real_t(1) / std::sqrt(n2) : real_t(1);
        for (std::int64_t j = 0; j < atom; ++j) k[m * atom + j] *= inv;
    }
    SyntheticModel model;
    model.layers.push_back(std::make_shared<ConvDictionary>(
        std::make_shared<autodiff::Parameter>("truth", std::move(k)), geom));
    model.code_h = code_h;
    model.code_w = code_w;
    return model;
}

SyntheticSample sample_synthetic(const SyntheticModel& model, std::int64_t n,
                                 std::uint64_t seed) {
    if (n < 1) throw DimensionError("sample_synthetic: n must be >= 1");
    if (model.layers.empty()) throw DimensionError("sample_synthetic: no layers");
    if (model.density < 0 || model.density > 1) {
        throw DimensionError("sample_synthetic: density must lie in [0,1]");
    }
    const auto& top = *model.layers.front();
    Rng rng = Rng::substream(seed, 0xda7a);

    Tensor codes({n, top.geometry().out_channels, model.code_h, model.code_w});
    for (std::int64_t i = 0; i < codes.size(); ++i) {
        if (rng.uniform() >= model.density) continue;
        if (model.magnitude == Magnitude::Normal) {
            codes[i] = static_cast<real_t>(rng.normal());
        } else {
            const real_t mag = static_cast<real_t>(rng.uniform(0.5, 1.5));
            codes[i] = rng.uniform() < 0.5 ? mag : -mag;
        }
    }

    Tensor x = codes;
    for (const auto& layer : model.layers) {
        x = decode(x, *layer);
    }
    if (model.noise_std > 0) {
        Tensor noise = rng.normal_tensor(x.shape(), 0, model.noise_std);
        x = add(x, noise);
    }

    // One global rescale keeps images inside [-1,1] while preserving the
    // generative relation between returned codes and images.
    real_t scale_factor = 1;
    const real_t m = max_abs(x);
    if (m > 1) scale_factor = real_t(0.99) / m;
    if (scale_factor != 1) {
        x = scale(x, scale_factor);
        codes = scale(codes, scale_factor);
    }

    SyntheticSample out;
    out.data.images = std::move(x);
    out.codes = std::move(codes);
    out.scale = scale_factor;
    return out;
}

// ---- CIFAR-10 ----------------------------------------------------------------------

namespace {
constexpr std::int64_t kCifarRecord = 3073;
constexpr std::int64_t kCifarPixels = 3072;
} // namespace

Dataset load_cifar10(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    in.seekg(0, std::ios::end);
    const std::int64_t bytes = static_cast<std::int64_t>(in.tellg());
    in.seekg(0);
    if (bytes <= 0 || bytes % kCifarRecord != 0) {
        throw IoError(path + ": size " + std::to_string(bytes) +
                      " is not a multiple of the 3073-byte record");
    }
    const std::int64_t n = bytes / kCifarRecord;
    Dataset ds;
    ds.images = Tensor({n, 3, 32, 32});
    ds.labels.resize(static_cast<std::size_t>(n));
    std::vector<unsigned char> rec(kCifarRecord);
    for (std::int64_t s = 0; s < n; ++s) {
        if (!in.read(reinterpret_cast<char*>(rec.data()), kCifarRecord)) {
            throw IoError(path + ": truncated record " + std::to_string(s));
        }
        ds.labels[static_cast<std::size_t>(s)] = rec[0];
        real_t* dst = ds.images.data() + s * kCifarPixels;
        for (std::int64_t i = 0; i < kCifarPixels; ++i) {
            dst[i] = static_cast<real_t>(rec[static_cast<std::size_t>(1 + i)]) / real_t(127.5) -
                     real_t(1);
        }
    }
    return ds;
}

void save_cifar10(const std::string& path, const Dataset& ds) {
    if (ds.images.rank() != 4 || ds.images.dim(1) != 3 || ds.images.dim(2) != 32 ||
        ds.images.dim(3) != 32) {
        throw DimensionError("save_cifar10: expected [N,3,32,32] images");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    const std::int64_t n = ds.images.dim(0);
    std::vector<unsigned char> rec(kCifarRecord);
    for (std::int64_t s = 0; s < n; ++s) {
        rec[0] = ds.labels.empty() ? 0 : static_cast<unsigned char>(ds.labels[s]);
        const real_t* src = ds.images.data() + s * kCifarPixels;
        for (std::int64_t i = 0; i < kCifarPixels; ++i) {
            const real_t v = std::clamp<real_t>(src[i], -1, 1);
            rec[static_cast<std::size_t>(1 + i)] =
                static_cast<unsigned char>(std::lround((v + 1) * real_t(127.5)));
        }
        out.write(reinterpret_cast<const char*>(rec.data()), kCifarRecord);
    }
}

Dataset add_gaussian_noise(const Dataset& ds, real_t sigma, std::uint64_t seed, bool clip) {
    if (sigma < 0) throw DimensionError("add_gaussian_noise: sigma must be nonnegative");
    Dataset out;
    out.labels = ds.labels;
    if (sigma == 0) {
        out.images = ds.images;
        return out;
    }
    Rng rng = Rng::substream(seed, 0x4015e);
    out.images = Tensor(ds.images.shape());
    for (std::int64_t i = 0; i < ds.images.size(); ++i) {
        real_t v = ds.images[i] + sigma * static_cast<real_t>(rng.normal());
        if (clip) v = std::clamp<real_t>(v, -1, 1);
        out.images[i] = v;
    }
    return out;
}

Dataset downsample2x(const Dataset& ds) {
    if (ds.images.rank() != 4 || ds.images.dim(2) % 2 || ds.images.dim(3) % 2) {
        throw DimensionError("downsample2x: spatial dims must be even");
    }
    const std::int64_t n = ds.images.dim(0), c = ds.images.dim(1);
    const std::int64_t h = ds.images.dim(2) / 2, w = ds.images.dim(3) / 2;
    Dataset out;
    out.labels = ds.labels;
    out.images = Tensor({n, c, h, w});
    for (std::int64_t s = 0; s < n; ++s)
        for (std::int64_t ch = 0; ch < c; ++ch)
            for (std::int64_t i = 0; i < h; ++i)
                for (std::int64_t j = 0; j < w; ++j) {
                    out.images.at4(s, ch, i, j) =
                        (ds.images.at4(s, ch, 2 * i, 2 * j) +
                         ds.images.at4(s, ch, 2 * i, 2 * j + 1) +
                         ds.images.at4(s, ch, 2 * i + 1, 2 * j) +
                         ds.images.at4(s, ch, 2 * i + 1, 2 * j + 1)) /
                        real_t(4);
                }
    return out;
}

// ---- tensor file format ----------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'C', 'S', 'C', 'T'};
constexpr std::uint32_t kVersion = 1;
#ifdef CSC_REAL_FLOAT32
constexpr std::uint32_t kDtype = 2;
#else
constexpr std::uint32_t kDtype = 1;
#endif

template <class T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is, const std::string& path) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) {
        throw IoError(path + ": truncated header");
    }
    return v;
}

} // namespace

void save_tensor(const std::string& path, const Tensor& t) {
    if (t.empty()) throw DimensionError("save_tensor: empty tensor");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out.write(kMagic, 4);
    write_pod<std::uint32_t>(out, kVersion);
    write_pod<std::uint32_t>(out, kDtype);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::int64_t d : t.shape()) write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(sizeof(real_t)) * t.size());
    if (!out) throw IoError("short write to " + path);
}

Tensor load_tensor(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
        throw IoError(path + ": bad magic");
    }
    const auto version = read_pod<std::uint32_t>(in, path);
    if (version != kVersion) {
        throw IoError(path + ": unsupported version " + std::to_string(version));
    }
    const auto dtype = read_pod<std::uint32_t>(in, path);
    if (dtype != 1 && dtype != 2) {
        throw IoError(path + ": unknown dtype code " + std::to_string(dtype));
    }
    const auto rank = read_pod<std::uint32_t>(in, path);
    if (rank == 0 || rank > 8) throw IoError(path + ": bad rank " + std::to_string(rank));
    std::vector<std::int64_t> shape;
    std::int64_t total = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        const auto d = read_pod<std::uint64_t>(in, path);
        if (d == 0 || d > (1ull << 32)) throw IoError(path + ": bad dimension");
        shape.push_back(static_cast<std::int64_t>(d));
        if (total > (std::int64_t(1) << 40) / static_cast<std::int64_t>(d)) {
            throw IoError(path + ": dimensions overflow");
        }
        total *= static_cast<std::int64_t>(d);
    }
    Tensor t(shape);
    if (dtype == kDtype) {
        if (!in.read(reinterpret_cast<char*>(t.data()),
                     static_cast<std::streamsize>(sizeof(real_t)) * total)) {
            throw IoError(path + ": truncated payload");
        }
    } else if (dtype == 1) {
        std::vector<double> buf(static_cast<std::size_t>(total));
        if (!in.read(reinterpret_cast<char*>(buf.data()),
                     static_cast<std::streamsize>(sizeof(double)) * total)) {
            throw IoError(path + ": truncated payload");
        }
        for (std::int64_t i = 0; i < total; ++i)
            t[i] = static_cast<real_t>(buf[static_cast<std::size_t>(i)]);
    } else {
        std::vector<float> buf(static_cast<std::size_t>(total));
        if (!in.read(reinterpret_cast<char*>(buf.data()),
                     static_cast<std::streamsize>(sizeof(float)) * total)) {
            throw IoError(path + ": truncated payload");
        }
        for (std::int64_t i = 0; i < total; ++i)
            t[i] = static_cast<real_t>(buf[static_cast<std::size_t>(i)]);
    }
    return t;
}

// ---- PPM output -----------------------------------------------------------------------

void write_image_grid(const std::string& path, const Tensor& images) {
    if (images.rank() != 4 || images.dim(1) != 3) {
        throw DimensionError("write_image_grid: expected [N,3,H,W]");
    }
    if (max_abs(images) > 1 + real_t(1e-9)) {
        throw DimensionError("write_image_grid: values must lie in [-1,1]");
    }
    const std::int64_t n = images.dim(0), h = images.dim(2), w = images.dim(3);
    const std::int64_t sep = 2;
    const std::int64_t width = n * w + (n - 1) * sep;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << "P6\n" << width << ' ' << h << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(width * 3), 0);
    for (std::int64_t i = 0; i < h; ++i) {
        std::fill(row.begin(), row.end(), 0);
        for (std::int64_t s = 0; s < n; ++s) {
            const std::int64_t x0 = s * (w + sep);
            for (std::int64_t j = 0; j < w; ++j) {
                for (std::int64_t c = 0; c < 3; ++c) {
                    const real_t v = std::clamp<real_t>(images.at4(s, c, i, j), -1, 1);
                    row[static_cast<std::size_t>((x0 + j) * 3 + c)] =
                        static_cast<unsigned char>(std::lround((v + 1) * real_t(127.5)));
                }
            }
        }
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size()));
    }
    if (!out) throw IoError("short write to " + path);
}

} // namespace csc::data
