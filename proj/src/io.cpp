#include "supersal/io.hpp"

#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace sal {
namespace {

constexpr char kTensorMagic[4] = {'S', 'S', 'T', '0'};
constexpr char kCheckpointMagic[4] = {'S', 'S', 'C', 'K'};
constexpr uint32_t kCheckpointVersion = 1;

template <typename U>
void put_le(std::string& out, U v) {
    for (size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename U>
U get_le(const unsigned char* p) {
    U v = 0;
    for (size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
    return v;
}

template <typename T>
uint16_t dtype_code();
template <>
uint16_t dtype_code<float>() {
    return 0;
}
template <>
uint16_t dtype_code<double>() {
    return 1;
}

void read_exact(std::istream& in, char* dst, int64_t n, int64_t already, int64_t expected_total,
                const std::string& context) {
    in.read(dst, n);
    const int64_t got = in.gcount();
    check(got == n, context, ": truncated record, expected ", expected_total, " bytes but only ",
          already + got, " available");
}

template <typename U>
void floats_to_le(const U* src, int64_t n, std::string& out) {
    static_assert(sizeof(U) == 4 || sizeof(U) == 8);
    using Bits = std::conditional_t<sizeof(U) == 4, uint32_t, uint64_t>;
    for (int64_t i = 0; i < n; ++i) {
        Bits b;
        std::memcpy(&b, &src[i], sizeof(U));
        put_le(out, b);
    }
}

template <typename U>
void le_to_floats(const unsigned char* src, int64_t n, U* dst) {
    using Bits = std::conditional_t<sizeof(U) == 4, uint32_t, uint64_t>;
    for (int64_t i = 0; i < n; ++i) {
        Bits b = get_le<Bits>(src + i * sizeof(U));
        std::memcpy(&dst[i], &b, sizeof(U));
    }
}

}  // namespace

template <typename T>
void write_tensor_record(std::ostream& out, const Tensor<T>& t) {
    check(t.rank() >= 1 && t.rank() <= 4, "tensor record: rank ", t.rank(), " not in 1..4");
    for (int64_t e : t.shape())
        check(e >= 1 && e <= 0xffff, "tensor record: extent ", e, " not in 1..65535");
    std::string header;
    header.append(kTensorMagic, 4);
    put_le<uint16_t>(header, static_cast<uint16_t>(t.rank()));
    put_le<uint16_t>(header, dtype_code<T>());
    for (size_t i = 0; i < 4; ++i)
        put_le<uint16_t>(header, i < t.rank() ? static_cast<uint16_t>(t.dim(i)) : uint16_t{1});
    out.write(header.data(), static_cast<std::streamsize>(header.size()));

    const std::vector<T> vals = t.to_vector();
    std::string payload;
    payload.reserve(vals.size() * sizeof(T));
    floats_to_le(vals.data(), static_cast<int64_t>(vals.size()), payload);
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    check(out.good(), "tensor record: write failed");
}

template <typename T>
Tensor<T> read_tensor_record(std::istream& in, const std::string& context) {
    unsigned char header[16];
    read_exact(in, reinterpret_cast<char*>(header), 16, 0, 16, context);
    check(std::memcmp(header, kTensorMagic, 4) == 0, context, ": bad magic in tensor record");
    const uint16_t rank = get_le<uint16_t>(header + 4);
    const uint16_t dtype = get_le<uint16_t>(header + 6);
    check(rank >= 1 && rank <= 4, context, ": bad rank ", rank);
    check(dtype == dtype_code<T>(), context, ": dtype code ", dtype, " does not match reader");
    Shape shape;
    for (int i = 0; i < rank; ++i) {
        const uint16_t e = get_le<uint16_t>(header + 8 + 2 * i);
        check(e >= 1, context, ": zero extent in header");
        shape.push_back(e);
    }
    const int64_t n = shape_numel(shape);
    const int64_t payload_bytes = n * static_cast<int64_t>(sizeof(T));
    std::string raw(static_cast<size_t>(payload_bytes), '\0');
    read_exact(in, raw.data(), payload_bytes, 16, 16 + payload_bytes, context);
    std::vector<T> vals(static_cast<size_t>(n));
    le_to_floats(reinterpret_cast<const unsigned char*>(raw.data()), n, vals.data());
    return Tensor<T>::from_data(shape, std::move(vals));
}

template void write_tensor_record<float>(std::ostream&, const Tensor<float>&);
template void write_tensor_record<double>(std::ostream&, const Tensor<double>&);
template Tensor<float> read_tensor_record<float>(std::istream&, const std::string&);
template Tensor<double> read_tensor_record<double>(std::istream&, const std::string&);

// ---------------------------------------------------------------------------
// checkpoints

template <typename T>
void save_checkpoint(const ParameterStore<T>& store, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    check(out.good(), "checkpoint: cannot open ", path, " for writing");
    std::string head;
    head.append(kCheckpointMagic, 4);
    put_le<uint32_t>(head, kCheckpointVersion);
    put_le<uint16_t>(head, dtype_code<T>());
    const std::string& space = store.space().name;
    put_le<uint16_t>(head, static_cast<uint16_t>(space.size()));
    head += space;
    put_le<uint64_t>(head, store.layout_fingerprint());
    put_le<uint64_t>(head, store.param_data().size());
    put_le<uint64_t>(head, store.buffer_data().size());
    put_le<uint64_t>(head, store.bn_counts().size());
    floats_to_le(store.param_data().data(), static_cast<int64_t>(store.param_data().size()), head);
    floats_to_le(store.buffer_data().data(), static_cast<int64_t>(store.buffer_data().size()),
                 head);
    for (int64_t c : store.bn_counts()) put_le<uint64_t>(head, static_cast<uint64_t>(c));
    out.write(head.data(), static_cast<std::streamsize>(head.size()));
    check(out.good(), "checkpoint: write to ", path, " failed");
}

namespace {
struct CheckpointHeader {
    uint16_t dtype = 0;
    std::string space;
    uint64_t fingerprint = 0;
    uint64_t n_params = 0, n_buffers = 0, n_counts = 0;
};

CheckpointHeader read_checkpoint_header(std::istream& in, const std::string& path) {
    unsigned char fixed[12];
    read_exact(in, reinterpret_cast<char*>(fixed), 12, 0, 12, "checkpoint " + path);
    check(std::memcmp(fixed, kCheckpointMagic, 4) == 0, "checkpoint ", path, ": bad magic");
    const uint32_t version = get_le<uint32_t>(fixed + 4);
    check(version == kCheckpointVersion, "checkpoint ", path, ": unsupported version ", version);
    CheckpointHeader h;
    h.dtype = get_le<uint16_t>(fixed + 8);
    const uint16_t name_len = get_le<uint16_t>(fixed + 10);
    std::string name(name_len, '\0');
    read_exact(in, name.data(), name_len, 12, 12 + name_len, "checkpoint " + path);
    h.space = name;
    unsigned char sizes[32];
    read_exact(in, reinterpret_cast<char*>(sizes), 32, 12 + name_len, 12 + name_len + 32,
               "checkpoint " + path);
    h.fingerprint = get_le<uint64_t>(sizes);
    h.n_params = get_le<uint64_t>(sizes + 8);
    h.n_buffers = get_le<uint64_t>(sizes + 16);
    h.n_counts = get_le<uint64_t>(sizes + 24);
    return h;
}
}  // namespace

template <typename T>
void load_checkpoint(ParameterStore<T>& store, const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    check(in.good(), "checkpoint: cannot open ", path);
    const CheckpointHeader h = read_checkpoint_header(in, path);
    check(h.dtype == dtype_code<T>(), "checkpoint ", path, ": dtype code ", h.dtype,
          " does not match reader");
    check(h.space == store.space().name, "checkpoint ", path, ": space '", h.space,
          "' does not match store space '", store.space().name, "'");
    check(h.fingerprint == store.layout_fingerprint(), "checkpoint ", path,
          ": layout fingerprint mismatch");
    check(h.n_params == store.param_data().size() && h.n_buffers == store.buffer_data().size() &&
              h.n_counts == store.bn_counts().size(),
          "checkpoint ", path, ": payload sizes do not match store layout");

    const int64_t header_bytes = 12 + static_cast<int64_t>(h.space.size()) + 32;
    const int64_t payload = static_cast<int64_t>((h.n_params + h.n_buffers) * sizeof(T) +
                                                 h.n_counts * 8);
    std::string raw(static_cast<size_t>(payload), '\0');
    read_exact(in, raw.data(), payload, header_bytes, header_bytes + payload,
               "checkpoint " + path);
    const auto* p = reinterpret_cast<const unsigned char*>(raw.data());
    le_to_floats(p, static_cast<int64_t>(h.n_params), store.param_data().data());
    p += h.n_params * sizeof(T);
    le_to_floats(p, static_cast<int64_t>(h.n_buffers), store.buffer_data().data());
    p += h.n_buffers * sizeof(T);
    for (size_t i = 0; i < h.n_counts; ++i)
        store.bn_counts()[i] = static_cast<int64_t>(get_le<uint64_t>(p + i * 8));
}

std::string checkpoint_space_name(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    check(in.good(), "checkpoint: cannot open ", path);
    return read_checkpoint_header(in, path).space;
}

template void save_checkpoint<float>(const ParameterStore<float>&, const std::string&);
template void save_checkpoint<double>(const ParameterStore<double>&, const std::string&);
template void load_checkpoint<float>(ParameterStore<float>&, const std::string&);
template void load_checkpoint<double>(ParameterStore<double>&, const std::string&);

// ---------------------------------------------------------------------------

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    check(out.good(), "cannot open ", path, " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    check(out.good(), "write to ", path, " failed");
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    check(in.good(), "cannot open ", path);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace sal
