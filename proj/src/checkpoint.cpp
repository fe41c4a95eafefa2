#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "cae/error.hpp"
#include "cae/model.hpp"

namespace cae::model {

namespace {

constexpr char kMagic[4] = {'C', 'A', 'E', '1'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

void put_u32(std::string& out, std::uint32_t v) {
    char buf[4];
    std::memcpy(buf, &v, 4);
    out.append(buf, 4);
}

std::uint32_t get_u32(const std::string& in, std::size_t& pos) {
    if (pos + 4 > in.size()) throw IoError("checkpoint: truncated header");
    std::uint32_t v;
    std::memcpy(&v, in.data() + pos, 4);
    pos += 4;
    return v;
}

}  // namespace

std::string checkpoint_bytes(const TransformerWeights& w) {
    const ModelConfig& c = w.config;
    std::string out(kMagic, 4);
    put_u32(out, kVersion);
    for (std::size_t v : {c.n_layers, c.d_model, c.d_mlp, c.n_heads, c.vocab_size, c.max_seq})
        put_u32(out, static_cast<std::uint32_t>(v));
    w.for_each_param([&](const auto& t) {
        out.append(reinterpret_cast<const char*>(t.data()), static_cast<std::size_t>(t.size()) * sizeof(double));
    });
    return out;
}

TransformerWeights checkpoint_from_bytes(const std::string& bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw IoError("checkpoint: bad magic bytes");
    std::size_t pos = 4;
    if (get_u32(bytes, pos) != kVersion) throw IoError("checkpoint: unsupported version");
    ModelConfig c;
    c.n_layers = get_u32(bytes, pos);
    c.d_model = get_u32(bytes, pos);
    c.d_mlp = get_u32(bytes, pos);
    c.n_heads = get_u32(bytes, pos);
    c.vocab_size = get_u32(bytes, pos);
    c.max_seq = get_u32(bytes, pos);
    try {
        c.validate();
    } catch (const ConfigError& e) {
        throw IoError(std::string("checkpoint: invalid header: ") + e.what());
    }
    TransformerWeights w = zeros_like(c);
    w.for_each_param([&](auto& t) {
        const std::size_t n = static_cast<std::size_t>(t.size()) * sizeof(double);
        if (pos + n > bytes.size()) throw IoError("checkpoint: truncated weights");
        std::memcpy(t.data(), bytes.data() + pos, n);
        pos += n;
    });
    if (pos != bytes.size()) throw IoError("checkpoint: trailing bytes after weights");
    return w;
}

void save_checkpoint(const TransformerWeights& w, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("checkpoint: cannot open " + path.string() + " for writing");
    const std::string bytes = checkpoint_bytes(w);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("checkpoint: write failed for " + path.string());
}

TransformerWeights load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint: cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return checkpoint_from_bytes(ss.str());
}

}  // namespace cae::model
