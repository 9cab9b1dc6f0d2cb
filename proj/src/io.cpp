#include "dmi/io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <stdexcept>

#include "json.hpp"

namespace dmi::io {
namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void fail(const std::string& what, const std::string& path) {
    throw std::runtime_error(what + ": " + path);
}

}  // namespace

Tensorf read_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) fail("cannot open image", path);

    png_byte sig[8];
    if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8)) fail("not a PNG file", path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) fail("png init failed", path);
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        fail("png init failed", path);
    }
    std::vector<png_bytep> rows;
    std::vector<png_byte> pixels;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail("undecodable PNG", path);
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    const png_byte color = png_get_color_type(png, info);
    const png_byte depth = png_get_bit_depth(png, info);

    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    const int channels = png_get_channels(png, info);
    if (channels != 1 && channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail("unsupported channel count after decode", path);
    }
    const size_t stride = png_get_rowbytes(png, info);
    pixels.resize(stride * h);
    rows.resize(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = pixels.data() + y * stride;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    Tensorf out({channels, static_cast<int>(h), static_cast<int>(w)});
    for (png_uint_32 y = 0; y < h; ++y)
        for (png_uint_32 x = 0; x < w; ++x)
            for (int c = 0; c < channels; ++c)
                out.data()[(static_cast<int64_t>(c) * h + y) * w + x] =
                    static_cast<float>(pixels[y * stride + x * channels + c]) / 255.0f;
    return out;
}

void write_png(const std::string& path, const Tensorf& img) {
    if (img.rank() != 3 || (img.dim(0) != 1 && img.dim(0) != 3))
        throw std::invalid_argument("write_png: expected (C, H, W) with C of 1 or 3");
    const int C = img.dim(0), H = img.dim(1), W = img.dim(2);

    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) fail("cannot open for writing", path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) fail("png init failed", path);
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        fail("png init failed", path);
    }
    std::vector<png_byte> rowbuf;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        fail("png write failed", path);
    }
    png_init_io(png, fp.get());
    png_set_compression_level(png, 6);  // fixed settings keep output bitwise stable
    png_set_IHDR(png, info, static_cast<png_uint_32>(W), static_cast<png_uint_32>(H), 8,
                 C == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    rowbuf.resize(static_cast<size_t>(W) * C);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < C; ++c) {
                const float v = std::clamp(img.data()[(static_cast<int64_t>(c) * H + y) * W + x], 0.0f, 1.0f);
                rowbuf[static_cast<size_t>(x) * C + c] = static_cast<png_byte>(std::lround(v * 255.0f));
            }
        png_write_row(png, rowbuf.data());
    }
    png_write_end(png, info);
    png_destroy_write_struct(&png, &info);
}

Tensorf image_grid(const Tensorf& batch, int columns, float pad_value) {
    if (batch.rank() != 4 || batch.dim(0) < 1) throw std::invalid_argument("image_grid: expected (N, C, H, W)");
    if (columns < 1) throw std::invalid_argument("image_grid: columns must be >= 1");
    const int N = batch.dim(0), C = batch.dim(1), H = batch.dim(2), W = batch.dim(3);
    const int cols = std::min(columns, N);
    const int rows = (N + cols - 1) / cols;
    const int pad = 2;
    const int gh = rows * H + (rows + 1) * pad;
    const int gw = cols * W + (cols + 1) * pad;
    Tensorf grid = Tensorf::full({C, gh, gw}, pad_value);
    for (int n = 0; n < N; ++n) {
        const int r = n / cols, col = n % cols;
        const int oy = pad + r * (H + pad), ox = pad + col * (W + pad);
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y)
                std::copy(batch.data() + ((static_cast<int64_t>(n) * C + c) * H + y) * W,
                          batch.data() + ((static_cast<int64_t>(n) * C + c) * H + y) * W + W,
                          grid.data() + (static_cast<int64_t>(c) * gh + oy + y) * gw + ox);
    }
    return grid;
}

void save_checkpoint(const std::string& path, const Checkpoint& c) {
    nlohmann::ordered_json header;
    header["format"] = "dmi-checkpoint-v1";
    header["meta"] = c.meta;
    nlohmann::ordered_json dir = nlohmann::ordered_json::array();
    int64_t offset = 0;
    for (const auto& [name, t] : c.tensors) {
        nlohmann::ordered_json e;
        e["name"] = name;
        e["shape"] = t.shape();
        e["dtype"] = "f32";
        e["offset"] = offset;
        e["count"] = t.numel();
        dir.push_back(e);
        offset += t.numel();
    }
    header["tensors"] = dir;
    const std::string htxt = header.dump();

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) fail("cannot open checkpoint for writing", path);
    const char magic[8] = {'D', 'M', 'I', 'C', 'K', 'P', 'T', '1'};
    f.write(magic, 8);
    const uint64_t hlen = htxt.size();
    f.write(reinterpret_cast<const char*>(&hlen), 8);
    f.write(htxt.data(), static_cast<std::streamsize>(htxt.size()));
    for (const auto& [name, t] : c.tensors)
        f.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
    if (!f) fail("checkpoint write failed", path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail("cannot open checkpoint", path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, "DMICKPT1", 8) != 0) fail("not a checkpoint file", path);
    uint64_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), 8);
    if (!f || hlen == 0 || hlen > (1ull << 30)) fail("corrupt checkpoint header", path);
    std::string htxt(hlen, '\0');
    f.read(htxt.data(), static_cast<std::streamsize>(hlen));
    if (!f) fail("corrupt checkpoint header", path);

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(htxt);
    } catch (const nlohmann::json::exception&) {
        fail("corrupt checkpoint header", path);
    }
    if (header.value("format", "") != "dmi-checkpoint-v1") fail("unknown checkpoint format", path);

    Checkpoint c;
    for (auto& [k, v] : header.at("meta").items()) c.meta[k] = v.get<std::string>();
    for (const auto& e : header.at("tensors")) {
        const std::string name = e.at("name").get<std::string>();
        const std::vector<int> shape = e.at("shape").get<std::vector<int>>();
        if (e.value("dtype", "") != "f32") fail("unsupported tensor dtype in checkpoint", path);
        Tensorf t(shape);
        if (t.numel() != e.at("count").get<int64_t>()) fail("corrupt tensor directory", path);
        f.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
        if (!f) fail("truncated checkpoint blob", path);
        c.tensors.emplace_back(name, std::move(t));
    }
    return c;
}

Checkpoint checkpoint_from_state(const StateRefs& state, std::map<std::string, std::string> meta) {
    Checkpoint c;
    c.meta = std::move(meta);
    for (const auto& [name, t] : state) c.tensors.emplace_back(name, *t);
    return c;
}

void load_checkpoint_into_state(const Checkpoint& c, const StateRefs& state) {
    if (c.tensors.size() != state.size())
        throw std::runtime_error("checkpoint/state tensor count mismatch: " + std::to_string(c.tensors.size()) +
                                 " vs " + std::to_string(state.size()));
    for (size_t i = 0; i < state.size(); ++i) {
        const auto& [cname, ct] = c.tensors[i];
        const auto& [sname, st] = state[i];
        if (cname != sname) throw std::runtime_error("checkpoint tensor order mismatch at '" + cname + "'");
        if (!ct.same_shape(*st))
            throw std::runtime_error("checkpoint tensor shape mismatch for '" + cname + "': " + ct.shape_str() +
                                     " vs " + st->shape_str());
        *st = ct;
    }
}

std::string content_hash(const void* data, size_t bytes) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    uint64_t h = 0xcbf29ce484222325ull;
    for (size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string content_hash(const Tensorf& t) {
    return content_hash(t.data(), static_cast<size_t>(t.numel()) * sizeof(float));
}

std::string content_hash_file(const std::string& path) {
    const std::string text = read_text_file(path);
    return content_hash(text.data(), text.size());
}

bool file_exists(const std::string& path) { return std::filesystem::exists(path); }

void ensure_dir(const std::string& path) { std::filesystem::create_directories(path); }

std::string read_text_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail("cannot open file", path);
    std::string s((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return s;
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) fail("cannot open file for writing", path);
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!f) fail("write failed", path);
}

}  // namespace dmi::io
