#pragma once

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sintent/config.hpp"
#include "sintent/corpus.hpp"
#include "sintent/error.hpp"
#include "sintent/model.hpp"

namespace sintent {

inline constexpr char kCheckpointMagic[4] = {'S', 'I', 'N', 'T'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline void put_u16(std::string& out, std::uint16_t v) { out.append(reinterpret_cast<const char*>(&v), 2); }
inline void put_u32(std::string& out, std::uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); }

inline std::string fmt_double(double v) {
    char buf[32];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

// Ordered key/value lines; classes and words keep their order.
inline std::string encode_metadata(const ModelConfig& c, Variant v, const ClassList& classes,
                                   const Vocabulary& vocab) {
    std::ostringstream o;
    o << "variant " << variant_name(v) << '\n';
    o << "config.vocab_size " << c.vocab_size << '\n';
    o << "config.embed_dim " << c.embed_dim << '\n';
    o << "config.hidden_dim " << c.hidden_dim << '\n';
    o << "config.num_layers " << c.num_layers << '\n';
    o << "config.dropout " << fmt_double(c.dropout) << '\n';
    o << "config.num_classes " << c.num_classes << '\n';
    o << "config.beta " << fmt_double(c.beta) << '\n';
    o << "config.focal_alpha " << fmt_double(c.focal_alpha) << '\n';
    o << "config.focal_gamma " << fmt_double(c.focal_gamma) << '\n';
    o << "config.lookahead_k " << c.lookahead_k << '\n';
    o << "config.context_turns " << c.context_turns << '\n';
    o << "config.context_max_tokens " << c.context_max_tokens << '\n';
    o << "config.epochs " << c.epochs << '\n';
    o << "config.lr " << fmt_double(c.lr) << '\n';
    o << "config.batch_size " << c.batch_size << '\n';
    o << "config.ib_threshold " << fmt_double(c.ib_threshold) << '\n';
    o << "config.min_count " << c.min_count << '\n';
    o << "config.init_scale " << fmt_double(c.init_scale) << '\n';
    o << "config.forget_bias " << fmt_double(c.forget_bias) << '\n';
    o << "config.seed " << c.seed << '\n';
    for (const auto& n : classes.names())
        o << "class " << n << '\n';
    for (const auto& w : vocab.regular_words())
        o << "word " << w << '\n';
    return o.str();
}

struct Metadata {
    ModelConfig config;
    Variant variant = Variant::multitask;
    std::vector<std::string> classes;
    std::vector<std::string> words;
};

template <typename N>
N parse_number(const std::string& s, std::size_t offset, const std::string& key) {
    N v{};
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
        throw FormatError(offset, "bad value for " + key + ": '" + s + "'");
    return v;
}

inline Metadata decode_metadata(const std::string& text, std::size_t base) {
    Metadata m;
    bool have_variant = false;
    std::map<std::string, bool> seen;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const std::size_t nl = text.find('\n', pos);
        if (nl == std::string::npos)
            throw FormatError(base + pos, "metadata line without newline");
        const std::string line = text.substr(pos, nl - pos);
        const std::size_t off = base + pos;
        pos = nl + 1;
        const auto sp = line.find(' ');
        if (sp == std::string::npos)
            throw FormatError(off, "metadata line without value");
        const std::string key = line.substr(0, sp), val = line.substr(sp + 1);
        if (key == "class") {
            m.classes.push_back(val);
            continue;
        }
        if (key == "word") {
            m.words.push_back(val);
            continue;
        }
        if (seen[key])
            throw FormatError(off, "duplicate metadata key " + key);
        seen[key] = true;
        auto& c = m.config;
        auto num_i = [&](int& f) { f = parse_number<int>(val, off, key); };
        auto num_d = [&](double& f) { f = parse_number<double>(val, off, key); };
        if (key == "variant") {
            auto v = parse_variant(val);
            if (!v)
                throw FormatError(off, "unknown variant '" + val + "'");
            m.variant = *v;
            have_variant = true;
        } else if (key == "config.vocab_size") num_i(c.vocab_size);
        else if (key == "config.embed_dim") num_i(c.embed_dim);
        else if (key == "config.hidden_dim") num_i(c.hidden_dim);
        else if (key == "config.num_layers") num_i(c.num_layers);
        else if (key == "config.dropout") num_d(c.dropout);
        else if (key == "config.num_classes") num_i(c.num_classes);
        else if (key == "config.beta") num_d(c.beta);
        else if (key == "config.focal_alpha") num_d(c.focal_alpha);
        else if (key == "config.focal_gamma") num_d(c.focal_gamma);
        else if (key == "config.lookahead_k") num_i(c.lookahead_k);
        else if (key == "config.context_turns") num_i(c.context_turns);
        else if (key == "config.context_max_tokens") num_i(c.context_max_tokens);
        else if (key == "config.epochs") num_i(c.epochs);
        else if (key == "config.lr") num_d(c.lr);
        else if (key == "config.batch_size") num_i(c.batch_size);
        else if (key == "config.ib_threshold") num_d(c.ib_threshold);
        else if (key == "config.min_count") num_i(c.min_count);
        else if (key == "config.init_scale") num_d(c.init_scale);
        else if (key == "config.forget_bias") num_d(c.forget_bias);
        else if (key == "config.seed") c.seed = parse_number<std::uint64_t>(val, off, key);
        else
            throw FormatError(off, "unknown metadata key " + key);
    }
    if (!have_variant)
        throw FormatError(base, "metadata lacks a variant");
    return m;
}

class Reader {
public:
    explicit Reader(const std::string& bytes) : b_(bytes) {}

    std::size_t offset() const { return pos_; }
    bool done() const { return pos_ == b_.size(); }

    const char* take(std::size_t n, const char* what) {
        if (b_.size() - pos_ < n)
            throw FormatError(pos_, std::string("truncated ") + what);
        const char* p = b_.data() + pos_;
        pos_ += n;
        return p;
    }
    std::uint16_t u16(const char* what) {
        std::uint16_t v;
        std::memcpy(&v, take(2, what), 2);
        return v;
    }
    std::uint32_t u32(const char* what) {
        std::uint32_t v;
        std::memcpy(&v, take(4, what), 4);
        return v;
    }

private:
    const std::string& b_;
    std::size_t pos_ = 0;
};

} // namespace detail

// Serialized form: magic, version, metadata block, then every parameter as a
// named float32 tensor in canonical order.
template <typename T>
std::string checkpoint_bytes(Model<T>& model) {
    std::string out(kCheckpointMagic, 4);
    detail::put_u16(out, kCheckpointVersion);
    const std::string meta = detail::encode_metadata(model.config, model.variant, model.classes, model.vocab);
    detail::put_u32(out, static_cast<std::uint32_t>(meta.size()));
    out += meta;
    for (auto* p : model.params()) {
        detail::put_u32(out, static_cast<std::uint32_t>(p->name.size()));
        out += p->name;
        detail::put_u32(out, static_cast<std::uint32_t>(p->rows()));
        detail::put_u32(out, static_cast<std::uint32_t>(p->cols()));
        for (Eigen::Index i = 0; i < p->value.size(); ++i) {
            const float f = static_cast<float>(p->value.data()[i]);
            out.append(reinterpret_cast<const char*>(&f), 4);
        }
    }
    return out;
}

// Parses a whole checkpoint; nothing is returned unless every tensor is
// present exactly once with the architecture's shape.
template <typename T>
Model<T> model_from_checkpoint_bytes(const std::string& bytes) {
    detail::Reader r(bytes);
    const char* magic = r.take(4, "magic");
    if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw FormatError(0, "not a checkpoint (bad magic)");
    const std::size_t vpos = r.offset();
    const auto version = r.u16("version");
    if (version != kCheckpointVersion)
        throw FormatError(vpos, "unsupported checkpoint version " + std::to_string(version));
    const auto meta_len = r.u32("metadata length");
    const std::size_t meta_pos = r.offset();
    const std::string meta(r.take(meta_len, "metadata"), meta_len);
    auto md = detail::decode_metadata(meta, meta_pos);

    Model<T> model;
    try {
        model = make_model<T>(md.config, md.variant, Vocabulary::from_words(md.words), ClassList(md.classes));
    } catch (const Error& e) {
        throw FormatError(meta_pos, std::string("inconsistent metadata: ") + e.what());
    }
    if (model.config != md.config)
        throw FormatError(meta_pos, "metadata config does not match its vocabulary/classes/variant");

    std::map<std::string, Parameter<T>*> by_name;
    for (auto* p : model.params())
        by_name[p->name] = p;
    std::map<std::string, bool> loaded;
    while (!r.done()) {
        const std::size_t at = r.offset();
        const auto name_len = r.u32("tensor name length");
        const std::string name(r.take(name_len, "tensor name"), name_len);
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw FormatError(at, "unknown tensor '" + name + "'");
        if (loaded[name])
            throw FormatError(at, "duplicate tensor '" + name + "'");
        const auto rows = r.u32("tensor rows");
        const auto cols = r.u32("tensor cols");
        auto* p = it->second;
        if (rows != p->rows() || cols != p->cols())
            throw FormatError(at, "tensor '" + name + "' has shape " + std::to_string(rows) + "x" +
                                      std::to_string(cols) + ", expected " + std::to_string(p->rows()) + "x" +
                                      std::to_string(p->cols()));
        const std::size_t n = static_cast<std::size_t>(rows) * cols;
        const std::size_t data_at = r.offset();
        const char* data = r.take(n * 4, "tensor data");
        for (std::size_t i = 0; i < n; ++i) {
            float f;
            std::memcpy(&f, data + 4 * i, 4);
            if (!std::isfinite(f))
                throw FormatError(data_at + 4 * i, "non-finite value in tensor '" + name + "'");
            p->value.data()[i] = static_cast<T>(f);
        }
        loaded[name] = true;
    }
    for (const auto& [name, p] : by_name)
        if (!loaded[name])
            throw FormatError(bytes.size(), "missing tensor '" + name + "'");
    return model;
}

template <typename T>
void save_checkpoint(Model<T>& model, const std::string& path) {
    const std::string bytes = checkpoint_bytes(model);
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw DataError("cannot write checkpoint " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw DataError("failed writing checkpoint " + path);
}

inline std::string read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw DataError("cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <typename T = float>
Model<T> load_checkpoint(const std::string& path) {
    return model_from_checkpoint_bytes<T>(read_file_bytes(path));
}

} // namespace sintent
