#include "srmt/checkpoint.hpp"

#include <charconv>
#include <cstring>
#include <fstream>

namespace srmt {

namespace {

constexpr char kMagic[8] = {'S', 'R', 'M', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

std::string format_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

double parse_double(const std::string& key, const std::string& s) {
    double v = 0.0;
    auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size()) throw Error(key + ": not a number: " + s);
    return v;
}

int parse_int(const std::string& key, const std::string& s) {
    int v = 0;
    auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size()) throw Error(key + ": not an integer: " + s);
    return v;
}

class Writer {
public:
    explicit Writer(std::ofstream& out) : out_(out) {}
    template <typename T>
    void pod(const T& v) {
        out_.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
    void str(const std::string& s) {
        pod<std::uint64_t>(s.size());
        out_.write(s.data(), static_cast<std::streamsize>(s.size()));
    }
    void map(const Metadata& m) {
        pod<std::uint64_t>(m.size());
        for (const auto& [k, v] : m) {
            str(k);
            str(v);
        }
    }
    template <typename Scalar>
    void tensor(const std::string& name, const Matrix<Scalar>& m) {
        str(name);
        pod<std::int64_t>(m.rows());
        pod<std::int64_t>(m.cols());
        out_.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(Scalar)));
    }

private:
    std::ofstream& out_;
};

class Reader {
public:
    Reader(std::ifstream& in, std::string path) : in_(in), path_(std::move(path)) {}
    template <typename T>
    T pod() {
        T v{};
        in_.read(reinterpret_cast<char*>(&v), sizeof v);
        check();
        return v;
    }
    std::string str() {
        auto n = pod<std::uint64_t>();
        if (n > (1ull << 32)) fail("string too long");
        std::string s(n, '\0');
        in_.read(s.data(), static_cast<std::streamsize>(n));
        check();
        return s;
    }
    Metadata map() {
        Metadata m;
        auto n = pod<std::uint64_t>();
        for (std::uint64_t i = 0; i < n; ++i) {
            auto k = str();
            m[k] = str();
        }
        return m;
    }
    template <typename Scalar>
    void tensor_into(Matrix<Scalar>& m, const std::string& expected) {
        auto name = str();
        if (name != expected) fail("expected tensor " + expected + ", found " + name);
        auto rows = pod<std::int64_t>(), cols = pod<std::int64_t>();
        if (rows != m.rows() || cols != m.cols())
            fail("tensor " + name + " has shape " + std::to_string(rows) + "x" + std::to_string(cols) +
                 ", config expects " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
        in_.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(Scalar)));
        check();
    }
    [[noreturn]] void fail(const std::string& why) { throw Error("checkpoint " + path_ + ": " + why); }

private:
    void check() {
        if (!in_) fail("truncated file");
    }
    std::ifstream& in_;
    std::string path_;
};

}  // namespace

Metadata model_config_to_map(const ModelConfig& c) {
    return {
        {"layers", std::to_string(c.layers)},
        {"model_dim", std::to_string(c.model_dim)},
        {"ffn_dim", std::to_string(c.ffn_dim)},
        {"heads", std::to_string(c.heads)},
        {"vocab_size", std::to_string(c.vocab_size)},
        {"max_target_len", std::to_string(c.max_target_len)},
        {"max_source_len", std::to_string(c.max_source_len)},
        {"dropout", format_double(c.dropout)},
        {"review_mask_mode", std::string(to_string(c.review_mask_mode))},
        {"init", std::string(to_string(c.init))},
        {"init_scale", format_double(c.init_scale)},
    };
}

ModelConfig model_config_from_map(const Metadata& m) {
    auto get = [&](const std::string& key) -> const std::string& {
        auto it = m.find(key);
        if (it == m.end()) throw Error("model config is missing " + key);
        return it->second;
    };
    ModelConfig c;
    c.layers = parse_int("layers", get("layers"));
    c.model_dim = parse_int("model_dim", get("model_dim"));
    c.ffn_dim = parse_int("ffn_dim", get("ffn_dim"));
    c.heads = parse_int("heads", get("heads"));
    c.vocab_size = parse_int("vocab_size", get("vocab_size"));
    c.max_target_len = parse_int("max_target_len", get("max_target_len"));
    c.max_source_len = parse_int("max_source_len", get("max_source_len"));
    c.dropout = parse_double("dropout", get("dropout"));
    c.review_mask_mode = parse_review_mask_mode(get("review_mask_mode"));
    c.init = parse_init_mode(get("init"));
    c.init_scale = parse_double("init_scale", get("init_scale"));
    return c;
}

unsigned checkpoint_scalar_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint " + path.string());
    Reader r(in, path.string());
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) r.fail("not a checkpoint file");
    r.pod<std::uint32_t>();
    return r.pod<std::uint32_t>();
}

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const TrainState<Scalar>& state, const Metadata& metadata) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write checkpoint " + tmp.string());
        Writer w(out);
        out.write(kMagic, sizeof kMagic);
        w.pod(kVersion);
        w.pod<std::uint32_t>(sizeof(Scalar));
        w.map(model_config_to_map(state.model.config));
        w.map(metadata);
        w.pod<std::int64_t>(state.step);
        w.pod<std::int64_t>(state.epoch);
        w.pod<std::int64_t>(state.cursor);
        w.pod<std::int64_t>(state.adam.updates);
        for (double v : {state.cumulative_flops, state.avg_dec, state.avg_rev, state.avg_len, state.avg_total}) w.pod(v);
        for (const auto& [name, m] : named_tensors(state.model.params)) w.tensor(name, *m);
        for (const auto& [name, m] : named_tensors(state.adam.m)) w.tensor("adam.m." + name, *m);
        for (const auto& [name, m] : named_tensors(state.adam.v)) w.tensor("adam.v." + name, *m);
        if (!out) throw Error("failed writing checkpoint " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

template <typename Scalar>
TrainState<Scalar> load_checkpoint(const std::filesystem::path& path, Metadata* metadata) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint " + path.string());
    Reader r(in, path.string());
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) r.fail("not a checkpoint file");
    auto version = r.pod<std::uint32_t>();
    if (version != kVersion) r.fail("unsupported version " + std::to_string(version));
    auto scalar_bytes = r.pod<std::uint32_t>();
    if (scalar_bytes != sizeof(Scalar))
        r.fail("stored with " + std::to_string(scalar_bytes * 8) + "-bit scalars, requested " +
               std::to_string(sizeof(Scalar) * 8));
    ModelConfig config = model_config_from_map(r.map());
    Metadata meta = r.map();

    TrainState<Scalar> s;
    Rng unused(0);
    ModelConfig shape = config;
    s.model = Model<Scalar>(config, zeros_like(initialize_parameters<Scalar>(shape, unused)));
    s.adam = adam_init(s.model.params);
    s.step = r.pod<std::int64_t>();
    s.epoch = r.pod<std::int64_t>();
    s.cursor = r.pod<std::int64_t>();
    s.adam.updates = r.pod<std::int64_t>();
    for (double* v : {&s.cumulative_flops, &s.avg_dec, &s.avg_rev, &s.avg_len, &s.avg_total}) *v = r.pod<double>();
    for (auto& [name, m] : named_tensors(s.model.params)) r.tensor_into(*m, name);
    for (auto& [name, m] : named_tensors(s.adam.m)) r.tensor_into(*m, "adam.m." + name);
    for (auto& [name, m] : named_tensors(s.adam.v)) r.tensor_into(*m, "adam.v." + name);
    if (metadata) *metadata = std::move(meta);
    return s;
}

template void save_checkpoint(const std::filesystem::path&, const TrainState<float>&, const Metadata&);
template void save_checkpoint(const std::filesystem::path&, const TrainState<double>&, const Metadata&);
template TrainState<float> load_checkpoint(const std::filesystem::path&, Metadata*);
template TrainState<double> load_checkpoint(const std::filesystem::path&, Metadata*);

}  // namespace srmt
