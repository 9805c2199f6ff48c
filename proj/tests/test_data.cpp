#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <styleblend/dataset.hpp>
#include <styleblend/metrics.hpp>

using namespace styleblend;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
    fs::path p = fs::temp_directory_path() / ("styleblend_test_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

// literal-only fixed-Huffman deflate stream, to exercise the inflate path our
// own writer (stored blocks) never produces
std::vector<uint8_t> fixed_huffman_compress(const std::vector<uint8_t>& raw) {
    std::vector<uint8_t> out = {0x78, 0x01};
    uint64_t bitbuf = 0;
    int bitcnt = 0;
    auto put_bits_rev = [&](uint32_t code, int n) {  // huffman codes go MSB-first
        for (int i = n - 1; i >= 0; i--) {
            bitbuf |= static_cast<uint64_t>((code >> i) & 1) << bitcnt;
            if (++bitcnt == 8) {
                out.push_back(static_cast<uint8_t>(bitbuf & 0xff));
                bitbuf = 0;
                bitcnt = 0;
            }
        }
    };
    auto put_bits = [&](uint32_t v, int n) {  // header fields go LSB-first
        for (int i = 0; i < n; i++) {
            bitbuf |= static_cast<uint64_t>((v >> i) & 1) << bitcnt;
            if (++bitcnt == 8) {
                out.push_back(static_cast<uint8_t>(bitbuf & 0xff));
                bitbuf = 0;
                bitcnt = 0;
            }
        }
    };
    put_bits(1, 1);  // final
    put_bits(1, 2);  // fixed huffman
    for (uint8_t b : raw) {
        if (b < 144)
            put_bits_rev(0x30 + b, 8);
        else
            put_bits_rev(0x190 + (b - 144), 9);
    }
    put_bits_rev(0, 7);  // end of block
    if (bitcnt) out.push_back(static_cast<uint8_t>(bitbuf & 0xff));
    uint32_t ad = png::adler32(raw.data(), raw.size());
    png::put_be32(out, ad);
    return out;
}

}  // namespace

TEST_CASE("png: encode/decode round-trips arbitrary images") {
    Rng rng(1);
    for (int trial = 0; trial < 3; trial++) {
        Image im;
        im.width = rng.uniform_int(1, 40);
        im.height = rng.uniform_int(1, 40);
        im.rgb.resize(static_cast<size_t>(im.width) * im.height * 3);
        for (auto& b : im.rgb) b = static_cast<uint8_t>(rng.next_u64() & 0xff);
        Image back = decode_png(encode_png(im));
        CHECK(back.width == im.width);
        CHECK(back.height == im.height);
        CHECK(back.rgb == im.rgb);
    }
    CHECK_THROWS(decode_png({1, 2, 3, 4}));
}

TEST_CASE("png: inflate handles fixed-huffman streams and filtered rows") {
    // same pixel payload, compressed with fixed huffman codes instead of stored blocks
    Image im;
    im.width = 9;
    im.height = 5;
    im.rgb.resize(static_cast<size_t>(im.width) * im.height * 3);
    Rng rng(2);
    for (auto& b : im.rgb) b = static_cast<uint8_t>(rng.next_u64() & 0xff);

    std::vector<uint8_t> raw;
    std::vector<uint8_t> filters = {0, 1, 2, 3, 4};  // none, sub, up, average, paeth
    for (int y = 0; y < im.height; y++) {
        uint8_t ft = filters[static_cast<size_t>(y)];
        raw.push_back(ft);
        const uint8_t* row = im.rgb.data() + static_cast<size_t>(y) * im.width * 3;
        const uint8_t* up = y > 0 ? im.rgb.data() + static_cast<size_t>(y - 1) * im.width * 3 : nullptr;
        for (int x = 0; x < im.width * 3; x++) {
            int a = x >= 3 ? row[x - 3] : 0;
            int b = up ? up[x] : 0;
            int c = (up && x >= 3) ? up[x - 3] : 0;
            int v = row[x];
            switch (ft) {
                case 1: v -= a; break;
                case 2: v -= b; break;
                case 3: v -= (a + b) / 2; break;
                case 4: v -= png::paeth(a, b, c); break;
            }
            raw.push_back(static_cast<uint8_t>(v & 0xff));
        }
    }

    std::vector<uint8_t> file = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    std::vector<uint8_t> ihdr;
    png::put_be32(ihdr, static_cast<uint32_t>(im.width));
    png::put_be32(ihdr, static_cast<uint32_t>(im.height));
    ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});
    png::put_chunk(file, "IHDR", ihdr);
    png::put_chunk(file, "IDAT", fixed_huffman_compress(raw));
    png::put_chunk(file, "IEND", {});

    Image back = decode_png(file);
    CHECK(back.rgb == im.rgb);
}

TEST_CASE("render: deterministic; texture fields never move the mask, composition fields do") {
    const auto& styles = default_styles();
    SyntheticStyleSpec a = styles[0];

    for (const auto& cls : corpus_classes()) {
        Image r1 = render(a, cls, 42);
        Image r2 = render(a, cls, 42);
        CHECK(r1.rgb == r2.rgb);
        CHECK(render(a, cls, 43).rgb != r1.rgb);

        // change only texture fields: identical coverage map
        SyntheticStyleSpec tex = a;
        tex.pattern = "dots";
        tex.palette = {{{10, 200, 10}}, {{200, 10, 200}}};
        tex.background = {0, 0, 0};
        CHECK(render_mask(tex, cls, 42) == render_mask(a, cls, 42));
        CHECK(render(tex, cls, 42).rgb != r1.rgb);

        // change only outline thickness: the rendered image moves
        SyntheticStyleSpec comp = a;
        comp.outline_px = 4.0;
        CHECK(render(comp, cls, 42).rgb != r1.rgb);

        // change only scale: coverage map moves
        SyntheticStyleSpec comp2 = a;
        comp2.object_scale = 0.45;
        CHECK(render_mask(comp2, cls, 42) != render_mask(a, cls, 42));
    }

    CHECK_THROWS_AS(render(a, "hexagon", 1), ValidationError);
}

TEST_CASE("corpus: counts, splits, byte-identical rebuild, reference sets") {
    Config cfg;
    cfg.corpus_per_cell = 3;
    cfg.corpus_val_per_cell = 2;
    auto root = fresh_dir("corpus");
    CorpusManifest m = build_corpus(cfg, root.string(), 7);

    int cells = static_cast<int>(corpus_classes().size() * default_styles().size());
    CHECK(static_cast<int>(m.items.size()) == cells * 5);

    // split structure: disjoint, every cell non-empty in train, every class in val
    std::set<std::string> val_classes;
    std::map<std::string, int> train_count;
    for (const auto& it : m.items) {
        if (it.split == "val") val_classes.insert(it.class_name);
        if (it.split == "train") train_count[it.style + "/" + it.class_name]++;
    }
    CHECK(val_classes.size() == corpus_classes().size());
    CHECK(static_cast<int>(train_count.size()) == cells);

    // rebuild with the same seed: byte-identical files
    auto root2 = fresh_dir("corpus2");
    build_corpus(cfg, root2.string(), 7);
    for (const auto& it : m.items) {
        auto b1 = read_file((root / it.path).string());
        auto b2 = read_file((root2 / it.path).string());
        CHECK(b1 == b2);
    }
    CHECK(read_file((root / "manifest.json").string()) == read_file((root2 / "manifest.json").string()));

    // manifest load round-trip
    CorpusManifest m2 = load_manifest(root.string());
    CHECK(manifest_to_json(m2) == manifest_to_json(m));

    // reference sets
    ReferenceSet r1 = make_reference_set(m, "voltage", 1, 9);
    CHECK(r1.images.size() == 1);
    ReferenceSet r3 = make_reference_set(m, "voltage", 3, 9);
    CHECK(r3.images.size() == 3);
    std::set<std::string> distinct(r3.classes.begin(), r3.classes.end());
    CHECK(distinct.size() == 3);
    ReferenceSet r3b = make_reference_set(m, "voltage", 3, 9);
    CHECK(r3.hashes() == r3b.hashes());
    CHECK_THROWS_AS(make_reference_set(m, "no-such-style", 1, 1), ValidationError);
    CHECK_THROWS_AS(make_reference_set(m, "voltage", 2, 1), ValidationError);

    fs::remove_all(root);
    fs::remove_all(root2);
}

TEST_CASE("gram similarity: identity, symmetry, sensitivity to channel permutation") {
    SyntheticStyleSpec s = default_styles()[1];
    Image a = render(s, "star", 5);
    CHECK(gram_style_similarity(a, a) == doctest::Approx(1.0).epsilon(1e-9));

    Image perm = a;
    for (size_t p = 0; p + 2 < perm.rgb.size(); p += 3) {
        std::swap(perm.rgb[p], perm.rgb[p + 2]);
        std::swap(perm.rgb[p + 1], perm.rgb[p + 2]);
    }
    double sp = gram_style_similarity(a, perm);
    CHECK(sp < 1.0);
    CHECK(gram_style_similarity(perm, a) == doctest::Approx(sp).epsilon(1e-12));

    Image small;
    small.width = 16;
    small.height = 16;
    small.rgb.assign(16 * 16 * 3, 0);
    CHECK_THROWS_AS(gram_style_similarity(a, small), ValidationError);
}

TEST_CASE("gram metric validity gate: same-style pairs beat cross-style pairs on >= 90% of triples") {
    Config cfg;
    cfg.corpus_per_cell = 1;
    cfg.corpus_val_per_cell = 3;
    auto root = fresh_dir("gram");
    CorpusManifest m = build_corpus(cfg, root.string(), 13);
    double rate = gram_separation_rate(m, 120, 21);
    INFO("separation rate ", rate);
    CHECK(rate >= 0.9);
    fs::remove_all(root);
}

TEST_CASE("class probe: validation gate, probability axioms, noise stays uncertain") {
    Config cfg;
    cfg.corpus_per_cell = 30;
    cfg.corpus_val_per_cell = 5;
    auto root = fresh_dir("probe");
    CorpusManifest m = build_corpus(cfg, root.string(), 17);

    ClassProbe fresh = ClassProbe::init(corpus_classes(), 23);
    Image any = render(default_styles()[0], "circle", 3);
    CHECK_THROWS_AS(fresh.align_score(any, "circle"), ValidationError);  // unvalidated probe refuses

    ClassProbe probe = ClassProbe::init(corpus_classes(), 23);
    double acc = probe.train(m, 10, 1e-3, 29);
    INFO("probe held-out accuracy ", acc);
    CHECK(acc >= 0.9);
    CHECK(probe.validated());

    // held-out argmax agreement, the validation criterion itself
    int hits = 0, total = 0;
    for (const auto& it : m.items)
        if (it.split == "val") {
            total++;
            if (probe.predict(load_item(m, it)) == it.class_name) hits++;
        }
    CHECK(static_cast<double>(hits) / total >= 0.9);

    // probabilities form a distribution
    auto p = probe.probabilities(any);
    double sum = 0;
    for (double v : p) {
        CHECK(v >= 0.0);
        sum += v;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));

    // uniform noise: no confident class
    Rng rng(31);
    Image noise;
    noise.width = noise.height = 32;
    noise.rgb.resize(32 * 32 * 3);
    for (auto& b : noise.rgb) b = static_cast<uint8_t>(rng.next_u64() & 0xff);
    auto pn = probe.probabilities(noise);
    CHECK(*std::max_element(pn.begin(), pn.end()) < 0.9);

    CHECK_THROWS_AS(probe.align_score(any, "pentagon"), ValidationError);
    fs::remove_all(root);
}
