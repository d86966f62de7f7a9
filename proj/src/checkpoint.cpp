#include "sglab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace sglab {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'S', 'G', 'C', 'K'};
constexpr std::uint8_t kFloat32 = 1;

template <typename U>
void put(std::string& out, U v) {
    char buf[sizeof(U)];
    std::memcpy(buf, &v, sizeof(U));
    out.append(buf, sizeof(U));
}

void put_text(std::string& out, std::string_view text) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
    out.append(text);
}

class Reader {
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    template <typename U>
    U get(const char* what) {
        need(sizeof(U), what);
        U v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(U));
        pos_ += sizeof(U);
        return v;
    }
    std::string_view take(std::size_t n, const char* what) {
        need(n, what);
        auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::string text(const char* what) { return std::string(take(get<std::uint32_t>(what), what)); }
    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n, const char* what) const {
        if (bytes_.size() - pos_ < n) throw CheckpointError(std::string("truncated while reading ") + what);
    }
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

std::uint32_t variant_id(Variant v) { return static_cast<std::uint32_t>(v); }

}  // namespace

Checkpoint make_checkpoint(const TrainState& state) {
    std::ostringstream rng;
    rng << state.rng;
    return {state.arch, state.iteration, state.config.digest(), rng.str(), state.generator, state.discriminator};
}

std::string serialize_checkpoint(const Checkpoint& c) {
    std::string out(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint32_t>(out, variant_id(c.arch.variant));
    put<std::uint64_t>(out, c.iteration);
    put<std::uint64_t>(out, c.config_digest);
    put_text(out, c.rng_state);
    put_text(out, c.arch.to_text());

    TensorMap<float> all = c.generator.tensors();
    for (const auto& [name, t] : c.discriminator.tensors())
        if (!all.emplace(name, t).second) throw std::invalid_argument("duplicate tensor name " + name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(all.size()));
    for (const auto& [name, t] : all) {
        put_text(out, name);
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
        put<std::uint8_t>(out, kFloat32);
        out.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(float));
    }
    return out;
}

Checkpoint parse_checkpoint(std::string_view bytes) {
    Reader r(bytes);
    if (r.take(4, "magic") != std::string_view(kMagic, 4)) throw CheckpointError("bad magic");
    const auto version = r.get<std::uint32_t>("version");
    if (version != kCheckpointVersion)
        throw CheckpointError("unsupported format version " + std::to_string(version));
    const auto variant = r.get<std::uint32_t>("variant");
    if (variant > variant_id(Variant::diegan)) throw CheckpointError("unknown variant id " + std::to_string(variant));

    Checkpoint c;
    c.iteration = r.get<std::uint64_t>("iteration");
    c.config_digest = r.get<std::uint64_t>("config digest");
    c.rng_state = r.text("rng state");
    try {
        c.arch = Architecture::parse(r.text("architecture"));
    } catch (const CheckpointError&) {
        throw;
    } catch (const std::exception& e) {
        throw CheckpointError(std::string("bad architecture: ") + e.what());
    }
    if (variant_id(c.arch.variant) != variant) throw CheckpointError("variant id disagrees with architecture");

    ModelSpec gspec, dspec;
    try {
        gspec = c.arch.generator();
        dspec = c.arch.discriminator();
    } catch (const std::exception& e) {
        throw CheckpointError(std::string("invalid architecture: ") + e.what());
    }
    std::map<std::string, std::pair<Shape, bool>> expected;  // name -> (shape, is generator)
    for (const auto& p : gspec.parameters()) expected[p.name] = {p.shape, true};
    for (const auto& p : dspec.parameters()) expected[p.name] = {p.shape, false};

    const auto count = r.get<std::uint32_t>("tensor count");
    if (count != expected.size())
        throw CheckpointError("expected " + std::to_string(expected.size()) + " tensors, found " +
                              std::to_string(count));
    std::set<std::string> seen;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.text("tensor name");
        auto it = expected.find(name);
        if (it == expected.end()) throw CheckpointError("unexpected tensor '" + name + "'");
        if (!seen.insert(name).second) throw CheckpointError("duplicate tensor '" + name + "'");
        const auto rank = r.get<std::uint32_t>("tensor rank");
        if (rank > 8) throw CheckpointError("implausible rank for '" + name + "'");
        Shape shape;
        for (std::uint32_t k = 0; k < rank; ++k) shape.push_back(r.get<std::uint32_t>("tensor dims"));
        if (shape != it->second.first)
            throw CheckpointError("tensor '" + name + "' has shape " + shape_string(shape) + ", expected " +
                                  shape_string(it->second.first));
        if (r.get<std::uint8_t>("dtype") != kFloat32) throw CheckpointError("unsupported dtype for '" + name + "'");
        Tensor<float> t(shape);
        const auto raw = r.take(t.size() * sizeof(float), "tensor data");
        std::memcpy(t.data(), raw.data(), raw.size());
        (it->second.second ? c.generator : c.discriminator).set(name, std::move(t));
    }
    if (!r.done()) throw CheckpointError("trailing bytes after tensor table");
    return c;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
    const std::string bytes = serialize_checkpoint(checkpoint);
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) {
            out.close();
            std::error_code ec;
            std::filesystem::remove(tmp, ec);
            throw std::runtime_error("failed writing checkpoint " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_checkpoint(buf.str());
}

}  // namespace sglab
