#include "eviseg/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "eviseg/rng.hpp"
#include "eviseg/tensor_io.hpp"

namespace eviseg {

namespace {

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

struct ShapeParams {
    double cx, cy;       // center
    double ax, ay;       // half-axes in pixels
    double inner = 0.0;  // inner/outer radius ratio; 0 = filled blob
    double contrast;
};

// Soft occupancy field of one shape at a pixel, in [0,1].
double shape_field(const ShapeParams& s, double x, double y) {
    const double dx = (x - s.cx) / s.ax;
    const double dy = (y - s.cy) / s.ay;
    const double d = std::sqrt(dx * dx + dy * dy);
    const double softness = std::max(2.0, std::sqrt(s.ax * s.ay) / 1.5);
    double v = sigmoid((1.0 - d) * softness);
    if (s.inner > 0.0) v *= sigmoid((d - s.inner) * softness);
    return v;
}

}  // namespace

void SyntheticSpec::validate() const {
    if (height < 8 || width < 8) throw std::invalid_argument("synthetic spec: image too small");
    if (num_classes < 2) throw std::invalid_argument("synthetic spec: need >= 2 classes");
    if (!(fg_min > 0.0 && fg_min < fg_max && fg_max <= 0.5)) {
        throw std::invalid_argument("synthetic spec: fg fraction range must satisfy 0 < min < max <= 0.5");
    }
    if (texture_noise < 0.0) throw std::invalid_argument("synthetic spec: negative texture noise");
}

Dataset generate(const SyntheticSpec& spec, std::size_t count) {
    spec.validate();
    const std::size_t h = spec.height, w = spec.width, c = spec.num_classes;
    Dataset out;
    out.reserve(count);

    for (std::size_t idx = 0; idx < count; ++idx) {
        Rng rng(mix_seed(spec.seed, idx));
        const double target_union = rng.next_uniform(spec.fg_min, spec.fg_max);
        const double per_shape = target_union / static_cast<double>(c - 1);

        std::vector<ShapeParams> shapes(c - 1);
        for (std::size_t s = 0; s < shapes.size(); ++s) {
            bool ring = spec.family == SyntheticSpec::Family::kRings;
            if (spec.family == SyntheticSpec::Family::kBoth) ring = rng.next_uniform() < 0.5;
            ShapeParams& sp = shapes[s];
            sp.inner = ring ? rng.next_uniform(0.45, 0.6) : 0.0;
            const double fill = ring ? 1.0 - sp.inner * sp.inner : 1.0;
            const double area = per_shape * double(h * w) / fill;
            const double aspect = rng.next_uniform(0.75, 1.3333);
            sp.ax = std::sqrt(area * aspect / 3.14159265358979323846);
            sp.ay = std::sqrt(area / (aspect * 3.14159265358979323846));
            const double cap = 0.5 * double(std::min(h, w)) - 2.0;
            sp.ax = std::min(sp.ax, cap);
            sp.ay = std::min(sp.ay, cap);
            sp.cx = rng.next_uniform(sp.ax + 1.0, double(w) - sp.ax - 1.0);
            sp.cy = rng.next_uniform(sp.ay + 1.0, double(h) - sp.ay - 1.0);
            sp.contrast = rng.next_uniform(0.85, 1.15);
        }

        // Scale all radii until the union foreground fraction lands inside
        // the requested range; area grows ~ scale^2, so this converges fast.
        std::vector<double> label(h * w, 0.0);
        std::vector<double> field(h * w, 0.0);
        const std::size_t lo = static_cast<std::size_t>(std::ceil(spec.fg_min * double(h * w)));
        const std::size_t hi = static_cast<std::size_t>(std::floor(spec.fg_max * double(h * w)));
        bool in_range = false;
        for (int iter = 0; iter < 64 && !in_range; ++iter) {
            std::fill(label.begin(), label.end(), 0.0);
            std::fill(field.begin(), field.end(), 0.0);
            std::size_t fg_count = 0;
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x) {
                    double img_v = 0.0;
                    double lab = 0.0;
                    for (std::size_t s = 0; s < shapes.size(); ++s) {
                        const double v = shape_field(shapes[s], double(x), double(y));
                        img_v += v * shapes[s].contrast;
                        if (v >= 0.5) lab = double(s + 1);
                    }
                    field[y * w + x] = img_v;
                    label[y * w + x] = lab;
                    if (lab > 0.0) ++fg_count;
                }
            if (fg_count >= lo && fg_count <= hi) {
                in_range = true;
                break;
            }
            double scale;
            if (fg_count == 0) {
                scale = 1.3;
            } else {
                const double target_px = 0.5 * double(lo + hi);
                scale = std::sqrt(target_px / double(fg_count));
                scale = std::clamp(scale, 0.7, 1.4);
            }
            for (auto& sp : shapes) {
                sp.ax *= scale;
                sp.ay *= scale;
                const double cap = 0.5 * double(std::min(h, w)) - 2.0;
                sp.ax = std::clamp(sp.ax, 1.0, cap);
                sp.ay = std::clamp(sp.ay, 1.0, cap);
                sp.cx = std::clamp(sp.cx, sp.ax + 1.0, double(w) - sp.ax - 1.0);
                sp.cy = std::clamp(sp.cy, sp.ay + 1.0, double(h) - sp.ay - 1.0);
            }
        }

        if (!in_range) {
            throw std::runtime_error("generate: could not reach foreground fraction range for image " +
                                     std::to_string(idx));
        }

        // texture + per-image normalization to zero mean, unit variance
        for (auto& v : field) v += spec.texture_noise * rng.next_normal();
        double mean = std::accumulate(field.begin(), field.end(), 0.0) / double(field.size());
        double var = 0.0;
        for (double v : field) var += (v - mean) * (v - mean);
        var /= double(field.size());
        const double inv_std = 1.0 / std::sqrt(std::max(var, 1e-12));
        for (auto& v : field) v = (v - mean) * inv_std;

        Sample sample;
        sample.id = idx;
        sample.image = Tensor::from({1, h, w}, std::move(field));
        sample.label = Tensor::from({h, w}, std::move(label));
        out.push_back(std::move(sample));
    }
    return out;
}

// ---- degradations ----

Tensor add_gaussian_noise(const Tensor& image, double sigma, std::uint64_t seed) {
    if (sigma < 0.0) throw std::invalid_argument("add_gaussian_noise: sigma must be >= 0");
    if (sigma == 0.0) return image.detach();
    Rng rng(seed);
    std::vector<double> out(image.values().begin(), image.values().end());
    for (auto& v : out) v += sigma * rng.next_normal();
    return Tensor::from(image.shape(), std::move(out));
}

namespace {
// mirror (symmetric) reflection: -1 -> 0, n -> n-1
inline std::size_t reflect(long i, long n) {
    if (i < 0) i = -1 - i;
    if (i >= n) i = 2 * n - 1 - i;
    return static_cast<std::size_t>(i);
}
}  // namespace

Tensor add_gaussian_blur(const Tensor& image, double sigma, int kernel_size) {
    if (image.rank() < 2) throw std::invalid_argument("add_gaussian_blur: need >= 2 dims");
    if (kernel_size < 1) throw std::invalid_argument("add_gaussian_blur: kernel size < 1");
    if (sigma <= 0.0) return image.detach();
    if (kernel_size % 2 == 0) ++kernel_size;

    const int half = kernel_size / 2;
    std::vector<double> kernel(kernel_size);
    double ksum = 0.0;
    for (int i = 0; i < kernel_size; ++i) {
        const double d = static_cast<double>(i - half);
        kernel[i] = std::exp(-d * d / (2.0 * sigma * sigma));
        ksum += kernel[i];
    }
    for (auto& k : kernel) k /= ksum;

    const Shape& shape = image.shape();
    const long h = static_cast<long>(shape[shape.size() - 2]);
    const long w = static_cast<long>(shape[shape.size() - 1]);
    const std::size_t planes = image.numel() / static_cast<std::size_t>(h * w);

    std::vector<double> out(image.values().begin(), image.values().end());
    std::vector<double> tmp(static_cast<std::size_t>(h * w));
    for (std::size_t pl = 0; pl < planes; ++pl) {
        double* plane = out.data() + pl * h * w;
        // horizontal
        for (long y = 0; y < h; ++y)
            for (long x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int k = 0; k < kernel_size; ++k)
                    acc += kernel[k] * plane[y * w + reflect(x + k - half, w)];
                tmp[y * w + x] = acc;
            }
        // vertical
        for (long y = 0; y < h; ++y)
            for (long x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int k = 0; k < kernel_size; ++k)
                    acc += kernel[k] * tmp[reflect(y + k - half, h) * w + x];
                plane[y * w + x] = acc;
            }
    }
    return Tensor::from(shape, std::move(out));
}

Tensor add_random_mask(const Tensor& image, double ratio, std::size_t patch,
                       std::uint64_t seed) {
    if (ratio < 0.0 || ratio > 1.0) {
        throw std::invalid_argument("add_random_mask: ratio must be in [0,1]");
    }
    if (patch == 0) throw std::invalid_argument("add_random_mask: patch size must be > 0");
    if (image.rank() < 2) throw std::invalid_argument("add_random_mask: need >= 2 dims");

    const Shape& shape = image.shape();
    const std::size_t h = shape[shape.size() - 2], w = shape[shape.size() - 1];
    const std::size_t ph = (h + patch - 1) / patch, pw = (w + patch - 1) / patch;
    const std::size_t num_patches = ph * pw;
    const auto masked = static_cast<std::size_t>(
        std::floor(ratio * static_cast<double>(num_patches) + 0.5));

    std::vector<std::size_t> order(num_patches);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    for (std::size_t i = num_patches; i > 1; --i)
        std::swap(order[i - 1], order[rng.next_below(i)]);

    std::vector<double> out(image.values().begin(), image.values().end());
    const std::size_t planes = image.numel() / (h * w);
    for (std::size_t m = 0; m < masked; ++m) {
        const std::size_t pr = order[m] / pw, pc = order[m] % pw;
        const std::size_t r0 = pr * patch, r1 = std::min(h, r0 + patch);
        const std::size_t c0 = pc * patch, c1 = std::min(w, c0 + patch);
        for (std::size_t pl = 0; pl < planes; ++pl)
            for (std::size_t r = r0; r < r1; ++r)
                for (std::size_t c = c0; c < c1; ++c) out[pl * h * w + r * w + c] = 0.0;
    }
    return Tensor::from(shape, std::move(out));
}

Tensor DegradationSpec::apply(const Tensor& image) const {
    switch (kind) {
        case Kind::kNone: return image.detach();
        case Kind::kGaussianNoise: return add_gaussian_noise(image, sigma, seed);
        case Kind::kGaussianBlur: return add_gaussian_blur(image, sigma, kernel_size);
        case Kind::kRandomMask: return add_random_mask(image, mask_ratio, patch, seed);
    }
    throw std::logic_error("degradation: unknown kind");
}

std::string DegradationSpec::label() const {
    char buf[64];
    switch (kind) {
        case Kind::kNone: return "none";
        case Kind::kGaussianNoise:
            std::snprintf(buf, sizeof(buf), "noise:%.2f", sigma);
            return buf;
        case Kind::kGaussianBlur:
            std::snprintf(buf, sizeof(buf), "blur:%.2f:%d", sigma, kernel_size);
            return buf;
        case Kind::kRandomMask:
            std::snprintf(buf, sizeof(buf), "mask:%.2f", mask_ratio);
            return buf;
    }
    return "unknown";
}

DegradationSpec DegradationSpec::parse(const std::string& text, std::uint64_t seed) {
    DegradationSpec spec;
    spec.seed = seed;
    if (text == "none" || text.empty()) return spec;
    std::vector<std::string> parts;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ':')) parts.push_back(part);
    try {
        if (parts[0] == "noise" && parts.size() == 2) {
            spec.kind = Kind::kGaussianNoise;
            spec.sigma = std::stod(parts[1]);
            return spec;
        }
        if (parts[0] == "blur" && (parts.size() == 2 || parts.size() == 3)) {
            spec.kind = Kind::kGaussianBlur;
            spec.sigma = std::stod(parts[1]);
            spec.kernel_size = parts.size() == 3 ? std::stoi(parts[2])
                                                 : std::max(3, int(std::ceil(spec.sigma * 4)) | 1);
            return spec;
        }
        if (parts[0] == "mask" && parts.size() == 2) {
            spec.kind = Kind::kRandomMask;
            spec.mask_ratio = std::stod(parts[1]);
            return spec;
        }
    } catch (const std::exception&) {
        // fall through to the shared error below
    }
    throw std::invalid_argument("degradation: cannot parse '" + text +
                                "' (expected none|noise:S|blur:S[:K]|mask:R)");
}

// ---- PGM ----

void write_pgm(const Tensor& image, const std::string& path, double lo, double hi) {
    if (image.rank() < 2 || !(hi > lo)) {
        throw std::invalid_argument("write_pgm: need >= 2 dims and hi > lo");
    }
    const Shape& shape = image.shape();
    const std::size_t h = shape[shape.size() - 2], w = shape[shape.size() - 1];
    if (image.numel() != h * w) {
        throw std::invalid_argument("write_pgm: tensor must be a single plane");
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_pgm: cannot open " + path);
    os << "P5\n" << w << " " << h << "\n255\n";
    for (double v : image.values()) {
        double scaled = (v - lo) / (hi - lo);
        scaled = std::clamp(scaled, 0.0, 1.0);
        const auto byte = static_cast<unsigned char>(std::floor(scaled * 255.0 + 0.5));
        os.put(static_cast<char>(byte));
    }
    if (!os) throw std::runtime_error("write_pgm: write failed for " + path);
}

Tensor read_pgm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("read_pgm: cannot open " + path);
    std::string magic;
    is >> magic;
    if (magic != "P5") throw std::runtime_error("read_pgm: not a P5 file: " + path);
    auto next_int = [&is, &path]() {
        // skip whitespace and '#' comment lines
        int ch = is.peek();
        while (ch == ' ' || ch == '\n' || ch == '\r' || ch == '\t' || ch == '#') {
            if (ch == '#') is.ignore(1 << 20, '\n');
            else is.get();
            ch = is.peek();
        }
        long v = -1;
        is >> v;
        if (!is || v < 0) throw std::runtime_error("read_pgm: malformed header: " + path);
        return static_cast<std::size_t>(v);
    };
    const std::size_t w = next_int(), h = next_int(), maxval = next_int();
    if (maxval != 255) throw std::runtime_error("read_pgm: only maxval 255 supported");
    is.get();  // single whitespace byte after maxval
    std::vector<double> out(h * w);
    for (auto& v : out) {
        const int byte = is.get();
        if (byte == EOF) throw std::runtime_error("read_pgm: truncated payload: " + path);
        v = static_cast<double>(byte) / 255.0;
    }
    return Tensor::from({h, w}, std::move(out));
}

// ---- checksums & dataset manifest ----

std::uint64_t fnv1a64(const void* data, std::size_t size) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    std::uint64_t hash = 0xcbf29ce484222325ull;
    for (std::size_t i = 0; i < size; ++i) {
        hash ^= bytes[i];
        hash *= 0x100000001b3ull;
    }
    return hash;
}

std::uint64_t checksum_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checksum: cannot open " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    const std::string bytes = buf.str();
    return fnv1a64(bytes.data(), bytes.size());
}

namespace {
std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

nlohmann::json spec_to_json(const SyntheticSpec& spec) {
    return {{"height", spec.height},
            {"width", spec.width},
            {"num_classes", spec.num_classes},
            {"family", spec.family == SyntheticSpec::Family::kBlobs   ? "blobs"
                       : spec.family == SyntheticSpec::Family::kRings ? "rings"
                                                                      : "both"},
            {"fg_min", spec.fg_min},
            {"fg_max", spec.fg_max},
            {"texture_noise", spec.texture_noise},
            {"seed", spec.seed}};
}
}  // namespace

void save_dataset(const Dataset& data, const SyntheticSpec& spec, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json files = nlohmann::json::array();
    char name[64];
    for (std::size_t i = 0; i < data.size(); ++i) {
        std::snprintf(name, sizeof(name), "img_%05zu.tns", i);
        const std::string img_path = dir + "/" + name;
        write_tns1(data[i].image, img_path);
        files.push_back({{"path", name},
                         {"kind", "image"},
                         {"checksum", hex64(checksum_file(img_path))}});
        std::snprintf(name, sizeof(name), "lbl_%05zu.tns", i);
        const std::string lbl_path = dir + "/" + name;
        write_tns1(data[i].label, lbl_path);
        files.push_back({{"path", name},
                         {"kind", "label"},
                         {"checksum", hex64(checksum_file(lbl_path))}});
    }
    nlohmann::json manifest;
    manifest["schema_version"] = 1;
    manifest["count"] = data.size();
    manifest["spec"] = spec_to_json(spec);
    manifest["files"] = files;
    std::ofstream os(dir + "/manifest.json");
    if (!os) throw std::runtime_error("save_dataset: cannot write manifest in " + dir);
    os << manifest.dump(2) << "\n";
}

Dataset load_dataset(const std::string& dir) {
    std::ifstream is(dir + "/manifest.json");
    if (!is) throw std::runtime_error("load_dataset: no manifest.json in " + dir);
    nlohmann::json manifest = nlohmann::json::parse(is);
    const std::size_t count = manifest.at("count").get<std::size_t>();
    Dataset out;
    out.reserve(count);
    char name[64];
    for (std::size_t i = 0; i < count; ++i) {
        Sample sample;
        sample.id = i;
        std::snprintf(name, sizeof(name), "img_%05zu.tns", i);
        sample.image = read_tns1(dir + "/" + name);
        std::snprintf(name, sizeof(name), "lbl_%05zu.tns", i);
        sample.label = read_tns1(dir + "/" + name);
        out.push_back(std::move(sample));
    }
    return out;
}

}  // namespace eviseg
