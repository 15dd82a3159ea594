#include "spadsim/click_io.hpp"

#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "spadsim/table.hpp"

namespace spadsim {

namespace {

constexpr char kMagic[8] = {'S', 'P', 'D', 'C', 'L', 'K', '0', '1'};

// The layouts below are little-endian by construction, independent of host
// byte order.
void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u16(std::string& buf, std::uint16_t v) {
    for (int i = 0; i < 2; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const char* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(p[i]);
    return v;
}

std::uint32_t get_u32(const char* p) {
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(p[i]);
    return v;
}

std::uint16_t get_u16(const char* p) {
    return static_cast<std::uint16_t>(static_cast<unsigned char>(p[0]) |
                                      (static_cast<unsigned char>(p[1]) << 8));
}

}  // namespace

void write_clicks_csv(const std::vector<ClickRecord>& clicks, std::ostream& os) {
    os << "timestamp_ns,gate_index,cause,gate_class\n";
    for (const ClickRecord& c : clicks) {
        os << format_double(c.timestamp_ns) << ',' << format_i64(c.gate_index) << ','
           << to_string(c.cause) << ',' << to_string(c.gate_class) << '\n';
    }
}

void write_clicks_binary(const std::vector<ClickRecord>& clicks, std::ostream& os) {
    os.write(kMagic, sizeof(kMagic));
    std::string payload;
    for (const ClickRecord& c : clicks) {
        payload.clear();
        std::uint64_t ts_bits;
        std::memcpy(&ts_bits, &c.timestamp_ns, sizeof(ts_bits));
        put_u64(payload, ts_bits);
        put_u64(payload, static_cast<std::uint64_t>(c.gate_index));
        payload.push_back(static_cast<char>(c.cause));
        payload.push_back(static_cast<char>(c.gate_class));
        put_u16(payload, static_cast<std::uint16_t>(c.trapped_filled.size()));
        for (std::uint32_t f : c.trapped_filled) put_u32(payload, f);
        std::string framed;
        put_u32(framed, static_cast<std::uint32_t>(payload.size()));
        os.write(framed.data(), static_cast<std::streamsize>(framed.size()));
        os.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    }
}

std::vector<ClickRecord> read_clicks_binary(std::istream& is) {
    char magic[8];
    if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("click stream: bad magic");
    std::vector<ClickRecord> clicks;
    char len_buf[4];
    std::string payload;
    while (is.read(len_buf, sizeof(len_buf))) {
        const std::uint32_t length = get_u32(len_buf);
        if (length < 20 || length > (1u << 20))
            throw std::runtime_error("click stream: implausible record length");
        payload.resize(length);
        if (!is.read(payload.data(), length))
            throw std::runtime_error("click stream: truncated record");
        const char* p = payload.data();
        ClickRecord rec;
        const std::uint64_t ts_bits = get_u64(p);
        std::memcpy(&rec.timestamp_ns, &ts_bits, sizeof(ts_bits));
        rec.gate_index = static_cast<std::int64_t>(get_u64(p + 8));
        rec.cause = static_cast<ClickCause>(static_cast<unsigned char>(p[16]));
        rec.gate_class = static_cast<GateClass>(static_cast<unsigned char>(p[17]));
        const std::uint16_t n = get_u16(p + 18);
        if (length != 20u + 4u * n)
            throw std::runtime_error("click stream: record length mismatch");
        rec.trapped_filled.resize(n);
        for (std::uint16_t i = 0; i < n; ++i)
            rec.trapped_filled[i] = get_u32(p + 20 + 4 * i);
        clicks.push_back(std::move(rec));
    }
    return clicks;
}

ClickChannel::ClickChannel(std::size_t capacity)
    : capacity_(capacity == 0 ? 1 : capacity) {}

void ClickChannel::push(const ClickRecord& record) {
    std::unique_lock lock(mutex_);
    not_full_.wait(lock, [&] { return buffer_.size() < capacity_ || closed_; });
    if (closed_) throw std::runtime_error("click channel: push after close");
    buffer_.push_back(record);
    not_empty_.notify_one();
}

bool ClickChannel::pop(ClickRecord& record) {
    std::unique_lock lock(mutex_);
    not_empty_.wait(lock, [&] { return !buffer_.empty() || closed_; });
    if (buffer_.empty()) return false;
    record = std::move(buffer_.front());
    buffer_.pop_front();
    not_full_.notify_one();
    return true;
}

void ClickChannel::close() {
    std::lock_guard lock(mutex_);
    closed_ = true;
    not_empty_.notify_all();
    not_full_.notify_all();
}

}  // namespace spadsim
