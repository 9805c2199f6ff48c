#ifndef STYLEBLEND_IMAGE_HPP
#define STYLEBLEND_IMAGE_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "styleblend/tensor.hpp"

namespace styleblend {

// 8-bit RGB image, row-major.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> rgb;  // 3 * width * height

    bool empty() const { return rgb.empty(); }
    uint64_t hash() const { return fnv1a64(rgb.data(), rgb.size()); }
};

// Pixels map to [-1, 1]; tensor layout is [3, h, w].
inline Tensor image_to_tensor(const Image& im) {
    Tensor t = Tensor::zeros({3, im.height, im.width});
    auto& v = t.data();
    size_t hw = static_cast<size_t>(im.height) * im.width;
    for (size_t p = 0; p < hw; p++)
        for (int c = 0; c < 3; c++) v[static_cast<size_t>(c) * hw + p] = im.rgb[p * 3 + c] / 127.5 - 1.0;
    return t;
}

inline Image tensor_to_image(const Tensor& t) {
    if (t.ndim() != 3 || t.dim(0) != 3) throw std::invalid_argument("tensor_to_image: expected [3,h,w]");
    Image im;
    im.height = t.dim(1);
    im.width = t.dim(2);
    size_t hw = static_cast<size_t>(im.height) * im.width;
    im.rgb.resize(hw * 3);
    const auto& v = t.data();
    for (size_t p = 0; p < hw; p++)
        for (int c = 0; c < 3; c++) {
            double x = (v[static_cast<size_t>(c) * hw + p] + 1.0) * 127.5;
            long q = std::lround(x);
            im.rgb[p * 3 + c] = static_cast<uint8_t>(q < 0 ? 0 : (q > 255 ? 255 : q));
        }
    return im;
}

// ---------------------------------------------------------------------------
// PNG, self-contained. Writing uses stored deflate blocks (byte-deterministic,
// no external zlib); reading implements full inflate so any valid 8-bit
// gray/RGB/RGBA non-interlaced PNG loads.
// ---------------------------------------------------------------------------

namespace png {

inline uint32_t crc32(const uint8_t* data, size_t len, uint32_t crc = 0) {
    static const auto table = [] {
        std::array<uint32_t, 256> t{};
        for (uint32_t n = 0; n < 256; n++) {
            uint32_t c = n;
            for (int k = 0; k < 8; k++) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
            t[n] = c;
        }
        return t;
    }();
    crc ^= 0xffffffffu;
    for (size_t i = 0; i < len; i++) crc = table[(crc ^ data[i]) & 0xff] ^ (crc >> 8);
    return crc ^ 0xffffffffu;
}

inline uint32_t adler32(const uint8_t* data, size_t len) {
    uint32_t a = 1, b = 0;
    for (size_t i = 0; i < len; i++) {
        a = (a + data[i]) % 65521;
        b = (b + a) % 65521;
    }
    return (b << 16) | a;
}

inline void put_be32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v >> 24));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v));
}

inline void put_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& payload) {
    put_be32(out, static_cast<uint32_t>(payload.size()));
    std::vector<uint8_t> body(type, type + 4);
    body.insert(body.end(), payload.begin(), payload.end());
    out.insert(out.end(), body.begin(), body.end());
    put_be32(out, crc32(body.data(), body.size()));
}

// zlib stream with stored (uncompressed) deflate blocks
inline std::vector<uint8_t> zlib_store(const std::vector<uint8_t>& raw) {
    std::vector<uint8_t> z;
    z.push_back(0x78);
    z.push_back(0x01);
    size_t pos = 0;
    do {
        size_t n = std::min<size_t>(raw.size() - pos, 65535);
        bool final = pos + n == raw.size();
        z.push_back(final ? 1 : 0);
        z.push_back(static_cast<uint8_t>(n & 0xff));
        z.push_back(static_cast<uint8_t>(n >> 8));
        z.push_back(static_cast<uint8_t>(~n & 0xff));
        z.push_back(static_cast<uint8_t>((~n >> 8) & 0xff));
        z.insert(z.end(), raw.begin() + static_cast<long>(pos), raw.begin() + static_cast<long>(pos + n));
        pos += n;
    } while (pos < raw.size());
    uint32_t ad = adler32(raw.data(), raw.size());
    put_be32(z, ad);
    return z;
}

// --- inflate ---------------------------------------------------------------

struct BitReader {
    const uint8_t* data;
    size_t len;
    size_t pos = 0;
    uint32_t bitbuf = 0;
    int bitcnt = 0;

    int bits(int need) {
        while (bitcnt < need) {
            if (pos >= len) throw std::runtime_error("png: truncated deflate stream");
            bitbuf |= static_cast<uint32_t>(data[pos++]) << bitcnt;
            bitcnt += 8;
        }
        int v = static_cast<int>(bitbuf & ((1u << need) - 1));
        bitbuf >>= need;
        bitcnt -= need;
        return v;
    }
    void align_byte() {
        bitbuf = 0;
        bitcnt = 0;
    }
};

struct Huffman {
    std::array<int, 16> count{};
    std::vector<int> symbol;
};

inline Huffman build_huffman(const std::vector<int>& lengths) {
    Huffman h;
    h.symbol.assign(lengths.size(), 0);
    for (int l : lengths) h.count[static_cast<size_t>(l)]++;
    h.count[0] = 0;
    std::array<int, 16> offs{};
    for (int l = 1; l < 16; l++) offs[static_cast<size_t>(l)] = offs[static_cast<size_t>(l - 1)] + h.count[static_cast<size_t>(l - 1)];
    for (size_t s = 0; s < lengths.size(); s++)
        if (lengths[s] != 0) h.symbol[static_cast<size_t>(offs[static_cast<size_t>(lengths[s])]++)] = static_cast<int>(s);
    return h;
}

inline int decode_symbol(BitReader& br, const Huffman& h) {
    int code = 0, first = 0, index = 0;
    for (int len = 1; len < 16; len++) {
        code |= br.bits(1);
        int count = h.count[static_cast<size_t>(len)];
        if (code - first < count) return h.symbol[static_cast<size_t>(index + (code - first))];
        index += count;
        first = (first + count) << 1;
        code <<= 1;
    }
    throw std::runtime_error("png: invalid huffman code");
}

inline std::vector<uint8_t> inflate(const uint8_t* src, size_t len, size_t expected_hint = 0) {
    static const int len_base[29] = {3,  4,  5,  6,  7,  8,  9,  10, 11,  13,  15,  17,  19,  23, 27,
                                     31, 35, 43, 51, 59, 67, 83, 99, 115, 131, 163, 195, 227, 258};
    static const int len_extra[29] = {0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2, 3, 3, 3, 3, 4, 4, 4, 4, 5, 5, 5, 5, 0};
    static const int dist_base[30] = {1,    2,    3,    4,    5,    7,     9,     13,    17,  25,
                                      33,   49,   65,   97,   129,  193,   257,   385,   513, 769,
                                      1025, 1537, 2049, 3073, 4097, 6145,  8193,  12289, 16385, 24577};
    static const int dist_extra[30] = {0, 0, 0, 0, 1, 1, 2, 2,  3,  3,  4,  4,  5,  5,  6,
                                       6, 7, 7, 8, 8, 9, 9, 10, 10, 11, 11, 12, 12, 13, 13};

    std::vector<uint8_t> out;
    if (expected_hint) out.reserve(expected_hint);
    BitReader br{src, len};
    bool final_block = false;
    while (!final_block) {
        final_block = br.bits(1) != 0;
        int type = br.bits(2);
        if (type == 0) {
            br.align_byte();
            if (br.pos + 4 > br.len) throw std::runtime_error("png: truncated stored block");
            int n = br.data[br.pos] | (br.data[br.pos + 1] << 8);
            int nn = br.data[br.pos + 2] | (br.data[br.pos + 3] << 8);
            if ((n ^ 0xffff) != nn) throw std::runtime_error("png: stored block length check failed");
            br.pos += 4;
            if (br.pos + static_cast<size_t>(n) > br.len) throw std::runtime_error("png: truncated stored data");
            out.insert(out.end(), br.data + br.pos, br.data + br.pos + n);
            br.pos += static_cast<size_t>(n);
        } else if (type == 1 || type == 2) {
            Huffman lit, dist;
            if (type == 1) {
                std::vector<int> ll(288);
                for (int i = 0; i < 144; i++) ll[static_cast<size_t>(i)] = 8;
                for (int i = 144; i < 256; i++) ll[static_cast<size_t>(i)] = 9;
                for (int i = 256; i < 280; i++) ll[static_cast<size_t>(i)] = 7;
                for (int i = 280; i < 288; i++) ll[static_cast<size_t>(i)] = 8;
                lit = build_huffman(ll);
                dist = build_huffman(std::vector<int>(30, 5));
            } else {
                static const int order[19] = {16, 17, 18, 0, 8, 7, 9, 6, 10, 5, 11, 4, 12, 3, 13, 2, 14, 1, 15};
                int hlit = br.bits(5) + 257;
                int hdist = br.bits(5) + 1;
                int hclen = br.bits(4) + 4;
                std::vector<int> cl(19, 0);
                for (int i = 0; i < hclen; i++) cl[static_cast<size_t>(order[i])] = br.bits(3);
                Huffman clh = build_huffman(cl);
                std::vector<int> lengths;
                lengths.reserve(static_cast<size_t>(hlit + hdist));
                while (static_cast<int>(lengths.size()) < hlit + hdist) {
                    int sym = decode_symbol(br, clh);
                    if (sym < 16) {
                        lengths.push_back(sym);
                    } else if (sym == 16) {
                        if (lengths.empty()) throw std::runtime_error("png: bad code-length repeat");
                        int rep = 3 + br.bits(2);
                        int prev = lengths.back();
                        for (int i = 0; i < rep; i++) lengths.push_back(prev);
                    } else if (sym == 17) {
                        int rep = 3 + br.bits(3);
                        for (int i = 0; i < rep; i++) lengths.push_back(0);
                    } else {
                        int rep = 11 + br.bits(7);
                        for (int i = 0; i < rep; i++) lengths.push_back(0);
                    }
                }
                lit = build_huffman(std::vector<int>(lengths.begin(), lengths.begin() + hlit));
                dist = build_huffman(std::vector<int>(lengths.begin() + hlit, lengths.end()));
            }
            while (true) {
                int sym = decode_symbol(br, lit);
                if (sym < 256) {
                    out.push_back(static_cast<uint8_t>(sym));
                } else if (sym == 256) {
                    break;
                } else {
                    sym -= 257;
                    if (sym >= 29) throw std::runtime_error("png: invalid length symbol");
                    int length = len_base[sym] + br.bits(len_extra[sym]);
                    int dsym = decode_symbol(br, dist);
                    if (dsym >= 30) throw std::runtime_error("png: invalid distance symbol");
                    int distance = dist_base[dsym] + br.bits(dist_extra[dsym]);
                    if (static_cast<size_t>(distance) > out.size()) throw std::runtime_error("png: distance too far");
                    size_t from = out.size() - static_cast<size_t>(distance);
                    for (int i = 0; i < length; i++) out.push_back(out[from + static_cast<size_t>(i)]);
                }
            }
        } else {
            throw std::runtime_error("png: invalid deflate block type");
        }
    }
    return out;
}

inline int paeth(int a, int b, int c) {
    int p = a + b - c;
    int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace png

inline std::vector<uint8_t> encode_png(const Image& im) {
    if (im.width <= 0 || im.height <= 0 || im.rgb.size() != static_cast<size_t>(im.width) * im.height * 3)
        throw std::invalid_argument("encode_png: malformed image");
    std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    std::vector<uint8_t> ihdr;
    png::put_be32(ihdr, static_cast<uint32_t>(im.width));
    png::put_be32(ihdr, static_cast<uint32_t>(im.height));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // RGB
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    png::put_chunk(out, "IHDR", ihdr);

    std::vector<uint8_t> raw;
    raw.reserve(static_cast<size_t>(im.height) * (1 + static_cast<size_t>(im.width) * 3));
    for (int y = 0; y < im.height; y++) {
        raw.push_back(0);  // filter: none
        const uint8_t* row = im.rgb.data() + static_cast<size_t>(y) * im.width * 3;
        raw.insert(raw.end(), row, row + static_cast<size_t>(im.width) * 3);
    }
    png::put_chunk(out, "IDAT", png::zlib_store(raw));
    png::put_chunk(out, "IEND", {});
    return out;
}

inline Image decode_png(const std::vector<uint8_t>& bytes) {
    static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    if (bytes.size() < 8 || std::memcmp(bytes.data(), sig, 8) != 0)
        throw std::runtime_error("decode_png: not a PNG file");
    size_t pos = 8;
    int width = 0, height = 0, bit_depth = 0, color_type = 0;
    std::vector<uint8_t> idat;
    auto be32 = [&](size_t p) {
        return (static_cast<uint32_t>(bytes[p]) << 24) | (static_cast<uint32_t>(bytes[p + 1]) << 16) |
               (static_cast<uint32_t>(bytes[p + 2]) << 8) | bytes[p + 3];
    };
    while (pos + 8 <= bytes.size()) {
        uint32_t len = be32(pos);
        std::string type(bytes.begin() + static_cast<long>(pos + 4), bytes.begin() + static_cast<long>(pos + 8));
        if (pos + 8 + len + 4 > bytes.size()) throw std::runtime_error("decode_png: truncated chunk " + type);
        const uint8_t* payload = bytes.data() + pos + 8;
        if (type == "IHDR") {
            width = static_cast<int>(be32(pos + 8));
            height = static_cast<int>(be32(pos + 12));
            bit_depth = payload[8];
            color_type = payload[9];
            if (payload[12] != 0) throw std::runtime_error("decode_png: interlaced PNG not supported");
            if (bit_depth != 8 || (color_type != 0 && color_type != 2 && color_type != 6))
                throw std::runtime_error("decode_png: only 8-bit gray/RGB/RGBA supported");
        } else if (type == "IDAT") {
            idat.insert(idat.end(), payload, payload + len);
        } else if (type == "IEND") {
            break;
        }
        pos += 8 + len + 4;
    }
    if (width <= 0 || height <= 0) throw std::runtime_error("decode_png: missing IHDR");
    if (idat.size() < 6) throw std::runtime_error("decode_png: missing IDAT");

    int channels = color_type == 0 ? 1 : (color_type == 2 ? 3 : 4);
    size_t stride = static_cast<size_t>(width) * static_cast<size_t>(channels);
    auto raw = png::inflate(idat.data() + 2, idat.size() - 2 - 4, static_cast<size_t>(height) * (stride + 1));
    if (raw.size() != static_cast<size_t>(height) * (stride + 1))
        throw std::runtime_error("decode_png: unexpected inflated size");

    // undo per-row filters
    std::vector<uint8_t> pix(static_cast<size_t>(height) * stride);
    int bpp = channels;
    for (int y = 0; y < height; y++) {
        uint8_t filter = raw[static_cast<size_t>(y) * (stride + 1)];
        const uint8_t* src = raw.data() + static_cast<size_t>(y) * (stride + 1) + 1;
        uint8_t* dst = pix.data() + static_cast<size_t>(y) * stride;
        const uint8_t* up = y > 0 ? pix.data() + static_cast<size_t>(y - 1) * stride : nullptr;
        for (size_t x = 0; x < stride; x++) {
            int a = x >= static_cast<size_t>(bpp) ? dst[x - static_cast<size_t>(bpp)] : 0;
            int b = up ? up[x] : 0;
            int c = (up && x >= static_cast<size_t>(bpp)) ? up[x - static_cast<size_t>(bpp)] : 0;
            int v = src[x];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: v += png::paeth(a, b, c); break;
                default: throw std::runtime_error("decode_png: unknown filter type");
            }
            dst[x] = static_cast<uint8_t>(v & 0xff);
        }
    }

    Image im;
    im.width = width;
    im.height = height;
    im.rgb.resize(static_cast<size_t>(width) * height * 3);
    for (size_t p = 0; p < static_cast<size_t>(width) * height; p++) {
        if (channels == 1) {
            im.rgb[p * 3] = im.rgb[p * 3 + 1] = im.rgb[p * 3 + 2] = pix[p];
        } else {
            im.rgb[p * 3] = pix[p * static_cast<size_t>(channels)];
            im.rgb[p * 3 + 1] = pix[p * static_cast<size_t>(channels) + 1];
            im.rgb[p * 3 + 2] = pix[p * static_cast<size_t>(channels) + 2];
        }
    }
    return im;
}

inline void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("write failed: " + path);
}

inline std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw std::runtime_error("cannot open: " + path);
    auto size = f.tellg();
    f.seekg(0);
    std::vector<uint8_t> bytes(static_cast<size_t>(size));
    f.read(reinterpret_cast<char*>(bytes.data()), size);
    if (!f) throw std::runtime_error("read failed: " + path);
    return bytes;
}

inline void save_png(const Image& im, const std::string& path) { write_file(path, encode_png(im)); }
inline Image load_png(const std::string& path) { return decode_png(read_file(path)); }

}  // namespace styleblend

#endif
