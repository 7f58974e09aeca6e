#include "qrsdet/tensor.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "qrsdet/errors.hpp"

namespace qrsdet {

namespace {
std::size_t shape_size(const std::vector<std::size_t>& dims) {
    std::size_t n = 1;
    for (std::size_t d : dims)
        n *= d;
    return n;
}

constexpr char kMagic[4] = {'Q', 'C', 'K', '1'};
constexpr uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in)
        throw ParseError("checkpoint truncated");
    return v;
}

void put_doubles(std::ostream& out, const std::vector<double>& v) {
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void get_doubles(std::istream& in, std::vector<double>& v, std::size_t n) {
    v.resize(n);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in)
        throw ParseError("checkpoint truncated");
}
} // namespace

Tensor::Tensor(std::vector<std::size_t> dims)
    : shape(std::move(dims)), data(shape_size(shape), 0.0) {}

void Tensor::ensure_grad() {
    if (grad.size() != data.size())
        grad.assign(data.size(), 0.0);
}

void Tensor::zero_grad() {
    if (!grad.empty())
        std::fill(grad.begin(), grad.end(), 0.0);
}

Tensor& ParameterStore::register_parameter(const std::string& name, Tensor& tensor) {
    for (const auto& s : slots_)
        if (s.name == name)
            throw ConfigError("duplicate parameter name: " + name);
    tensor.ensure_grad();
    Slot slot;
    slot.name = name;
    slot.tensor = &tensor;
    slot.m.assign(tensor.size(), 0.0);
    slot.v.assign(tensor.size(), 0.0);
    slots_.push_back(std::move(slot));
    return tensor;
}

void ParameterStore::register_buffer(const std::string& name, std::vector<double>& data) {
    for (const auto& b : buffers_)
        if (b.name == name)
            throw ConfigError("duplicate buffer name: " + name);
    buffers_.push_back({name, &data});
}

std::size_t ParameterStore::total_parameters() const {
    std::size_t n = 0;
    for (const auto& s : slots_)
        n += s.tensor->size();
    return n;
}

void ParameterStore::zero_grad() {
    for (auto& s : slots_)
        s.tensor->zero_grad();
}

void ParameterStore::serialize(std::ostream& out) const {
    out.write(kMagic, 4);
    put<uint32_t>(out, kVersion);
    put<uint64_t>(out, config_hash);
    put<uint64_t>(out, rng_seed);
    put<int64_t>(out, step_);
    put<uint64_t>(out, slots_.size());
    for (const auto& s : slots_) {
        put<uint32_t>(out, static_cast<uint32_t>(s.name.size()));
        out.write(s.name.data(), static_cast<std::streamsize>(s.name.size()));
        put<uint32_t>(out, static_cast<uint32_t>(s.tensor->shape.size()));
        for (std::size_t d : s.tensor->shape)
            put<uint64_t>(out, d);
        put_doubles(out, s.tensor->data);
        put_doubles(out, s.m);
        put_doubles(out, s.v);
    }
    put<uint64_t>(out, buffers_.size());
    for (const auto& b : buffers_) {
        put<uint32_t>(out, static_cast<uint32_t>(b.name.size()));
        out.write(b.name.data(), static_cast<std::streamsize>(b.name.size()));
        put<uint64_t>(out, b.data->size());
        put_doubles(out, *b.data);
    }
}

void ParameterStore::deserialize(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw ParseError("not a checkpoint file (bad magic)");
    const auto version = get<uint32_t>(in);
    if (version != kVersion)
        throw ParseError("unsupported checkpoint version " + std::to_string(version));
    config_hash = get<uint64_t>(in);
    rng_seed = get<uint64_t>(in);
    step_ = get<int64_t>(in);
    const auto n = get<uint64_t>(in);
    if (n != slots_.size())
        throw ParseError("checkpoint has " + std::to_string(n) + " parameters, model expects " +
                         std::to_string(slots_.size()));
    for (auto& s : slots_) {
        const auto name_len = get<uint32_t>(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (name != s.name)
            throw ParseError("checkpoint parameter '" + name + "' does not match model '" +
                             s.name + "'");
        const auto ndim = get<uint32_t>(in);
        std::vector<std::size_t> dims(ndim);
        for (auto& d : dims)
            d = static_cast<std::size_t>(get<uint64_t>(in));
        if (dims != s.tensor->shape)
            throw ParseError("checkpoint shape mismatch for parameter '" + name + "'");
        get_doubles(in, s.tensor->data, shape_size(dims));
        get_doubles(in, s.m, shape_size(dims));
        get_doubles(in, s.v, shape_size(dims));
    }
    const auto n_buffers = get<uint64_t>(in);
    if (n_buffers != buffers_.size())
        throw ParseError("checkpoint has " + std::to_string(n_buffers) +
                         " buffers, model expects " + std::to_string(buffers_.size()));
    for (auto& b : buffers_) {
        const auto name_len = get<uint32_t>(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (name != b.name)
            throw ParseError("checkpoint buffer '" + name + "' does not match model '" +
                             b.name + "'");
        const auto count = get<uint64_t>(in);
        if (count != b.data->size())
            throw ParseError("checkpoint buffer size mismatch for '" + name + "'");
        get_doubles(in, *b.data, count);
    }
}

void ParameterStore::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw ParseError("cannot open " + path.string() + " for writing");
    serialize(out);
}

void ParameterStore::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ParseError("cannot open " + path.string());
    deserialize(in);
}

void adam_step(ParameterStore& store, double lr, double beta1, double beta2, double eps) {
    store.step_ += 1;
    const double t = static_cast<double>(store.step_);
    const double bc1 = 1.0 - std::pow(beta1, t);
    const double bc2 = 1.0 - std::pow(beta2, t);
    for (auto& s : store.slots_) {
        Tensor& p = *s.tensor;
        p.ensure_grad();
        double* w = p.ptr();
        const double* g = p.grad_ptr();
        for (std::size_t i = 0; i < p.size(); ++i) {
            if (!std::isfinite(g[i]))
                throw TrainingError("non-finite gradient in parameter '" + s.name + "'");
            s.m[i] = beta1 * s.m[i] + (1.0 - beta1) * g[i];
            s.v[i] = beta2 * s.v[i] + (1.0 - beta2) * g[i] * g[i];
            const double m_hat = s.m[i] / bc1;
            const double v_hat = s.v[i] / bc2;
            w[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
        }
    }
}

uint64_t checkpoint_config_hash(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ParseError("cannot open " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw ParseError("not a checkpoint file (bad magic)");
    get<uint32_t>(in);
    return get<uint64_t>(in);
}

} // namespace qrsdet
