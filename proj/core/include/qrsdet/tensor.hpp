#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace qrsdet {

/// Dense row-major N-d array of doubles with an optional gradient buffer of
/// the same shape. Value-semantic; safe to move between threads.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;
    std::vector<double> grad; // empty until ensure_grad()

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> dims);
    static Tensor zeros(std::vector<std::size_t> dims) { return Tensor(std::move(dims)); }

    std::size_t size() const { return data.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }

    void ensure_grad();
    void zero_grad();

    double* ptr() { return data.data(); }
    const double* ptr() const { return data.data(); }
    double* grad_ptr() { return grad.data(); }
    const double* grad_ptr() const { return grad.data(); }
};

/// Registry of named parameters with adaptive-moment optimizer state. The
/// store does not own the tensors; layers do. Registration order is the
/// serialization order, so save/load is deterministic.
class ParameterStore {
public:
    struct Slot {
        std::string name;
        Tensor* tensor = nullptr;
        std::vector<double> m; // first moment
        std::vector<double> v; // second moment
    };

    struct Buffer {
        std::string name;
        std::vector<double>* data = nullptr;
    };

    Tensor& register_parameter(const std::string& name, Tensor& tensor);

    /// Non-optimized state that must survive save/load (e.g. batch-norm
    /// running statistics). Serialized after the parameters.
    void register_buffer(const std::string& name, std::vector<double>& data);

    std::vector<Slot>& slots() { return slots_; }
    const std::vector<Slot>& slots() const { return slots_; }
    const std::vector<Buffer>& buffers() const { return buffers_; }

    int64_t step() const { return step_; }
    void set_step(int64_t s) { step_ = s; }

    uint64_t rng_seed = 0;
    uint64_t config_hash = 0;

    std::size_t total_parameters() const;
    void zero_grad();

    /// Versioned binary checkpoint: parameter names, shapes, values and both
    /// optimizer moments. Byte-identical across save/load/save.
    void serialize(std::ostream& out) const;
    void deserialize(std::istream& in);
    void save(const std::filesystem::path& path) const;
    void load(const std::filesystem::path& path);

    friend void adam_step(ParameterStore& store, double lr, double beta1, double beta2,
                          double eps);

private:
    std::vector<Slot> slots_;
    std::vector<Buffer> buffers_;
    int64_t step_ = 0;
};

/// Bias-corrected adaptive-moment update over every registered parameter.
/// Throws TrainingError naming the parameter if a gradient is non-finite.
void adam_step(ParameterStore& store, double lr, double beta1 = 0.9, double beta2 = 0.999,
               double eps = 1e-8);

/// Read the config hash out of a checkpoint file without loading tensors.
uint64_t checkpoint_config_hash(const std::filesystem::path& path);

} // namespace qrsdet
