#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>

#include "sdm/adam.hpp"
#include "sdm/error.hpp"
#include "sdm/net.hpp"
#include "sdm/schedule.hpp"
#include "sdm/train.hpp"

namespace sdm {

/// Binary snapshot of a training run.
///
/// Layout (all integers and floats little-endian, floats IEEE-754 binary64):
///
///     "SDMC"  u32 version  u32 section_count
///     section*: char[4] tag  u64 payload_length  payload
///
/// Sections, in this order: SCHD schedule config, NETC net config, TRNC
/// train config, PARM parameters, ADAM optimizer states (ε step, then
/// fidelity step), EPOC epoch + seed.
struct Checkpoint {
    static constexpr std::uint32_t format_version = 1;

    ScheduleConfig schedule;
    NetConfig net;
    TrainConfig train;
    ParamVector params;
    AdamState adam;
    AdamState adam_fidelity;
    int epoch = 0;
    std::uint64_t seed = 0;

    static Checkpoint capture(const ScheduleConfig& sch, const TrainConfig& cfg, const TrainState& state) {
        return {sch, state.net.config(), cfg, state.net.params(), state.opt, state.opt_fidelity, state.epoch,
                cfg.seed};;
    }

    TrainState restore() const {
        TrainState s{DenoiserNet(net), adam, adam_fidelity, epoch};
        s.net.set_params(params);
        return s;
    }
};

namespace detail {

class ByteWriter {
public:
    void u32(std::uint32_t v) { put(v); }
    void u64(std::uint64_t v) { put(v); }
    void i64(std::int64_t v) { put(static_cast<std::uint64_t>(v)); }
    void f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
    void tag(std::string_view t) { bytes_.append(t.data(), 4); }
    void vec(const Eigen::VectorXd& v) {
        u64(static_cast<std::uint64_t>(v.size()));
        for (Eigen::Index i = 0; i < v.size(); ++i) f64(v(i));
    }
    void raw(const std::string& s) { bytes_ += s; }
    const std::string& bytes() const { return bytes_; }

private:
    template <class U>
    void put(U v) {
        for (std::size_t i = 0; i < sizeof(U); ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    std::string bytes_;
};

class ByteReader {
public:
    ByteReader(std::string_view data, std::string where) : data_(data), where_(std::move(where)) {}

    std::uint32_t u32() { return get<std::uint32_t>(); }
    std::uint64_t u64() { return get<std::uint64_t>(); }
    std::int64_t i64() { return static_cast<std::int64_t>(get<std::uint64_t>()); }
    double f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
    std::string tag() { return std::string(take(4)); }
    std::string_view take(std::size_t n) {
        if (data_.size() - pos_ < n) fail("truncated data");
        auto out = data_.substr(pos_, n);
        pos_ += n;
        return out;
    }
    Eigen::VectorXd vec() {
        const std::uint64_t n = u64();
        if (n > (data_.size() - pos_) / 8) fail("vector length exceeds remaining data");
        Eigen::VectorXd v(static_cast<Eigen::Index>(n));
        for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = f64();
        return v;
    }
    bool done() const { return pos_ == data_.size(); }
    [[noreturn]] void fail(const std::string& what) const {
        throw ParseError(where_, 0, what + " at byte " + std::to_string(pos_));
    }

private:
    template <class U>
    U get() {
        const auto s = take(sizeof(U));
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<unsigned char>(s[i])) << (8 * i);
        return v;
    }
    std::string_view data_;
    std::string where_;
    std::size_t pos_ = 0;
};

template <class E>
E enum_from(std::uint32_t v, std::uint32_t count, ByteReader& r, const char* what) {
    if (v >= count) r.fail(std::string("invalid ") + what);
    return static_cast<E>(v);
}

} // namespace detail

inline std::string encode_checkpoint(const Checkpoint& c) {
    using detail::ByteWriter;
    const auto section = [](ByteWriter& out, std::string_view tag, const ByteWriter& payload) {
        out.tag(tag);
        out.u64(payload.bytes().size());
        out.raw(payload.bytes());
    };

    ByteWriter out;
    out.tag("SDMC");
    out.u32(Checkpoint::format_version);
    out.u32(6);

    ByteWriter s;
    s.i64(c.schedule.T);
    s.f64(c.schedule.gamma_min);
    s.f64(c.schedule.gamma_max);
    section(out, "SCHD", s);

    ByteWriter n;
    n.i64(c.net.input_dim);
    n.i64(c.net.hidden_dim);
    n.i64(c.net.n_freqs);
    n.u32(c.net.time_embed ? 1 : 0);
    n.i64(c.net.n_time_freqs);
    n.u32(static_cast<std::uint32_t>(c.net.time_input));
    section(out, "NETC", n);

    ByteWriter t;
    t.u32(static_cast<std::uint32_t>(c.train.mode));
    t.i64(c.train.T);
    t.i64(c.train.K);
    t.i64(c.train.epochs);
    t.i64(c.train.batch_size);
    t.f64(c.train.lr);
    t.f64(c.train.lambda_fidelity);
    t.u32(static_cast<std::uint32_t>(c.train.chain_grad));
    t.u32(static_cast<std::uint32_t>(c.train.chain_init));
    t.u32(c.train.weighted_eps_loss ? 1 : 0);
    t.u32(c.train.combined_step ? 1 : 0);
    t.u64(c.train.seed);
    t.i64(c.train.eval_every);
    t.i64(c.train.eval_samples);
    t.i64(c.train.full_eval_every);
    section(out, "TRNC", t);

    ByteWriter p;
    p.vec(c.params);
    section(out, "PARM", p);

    ByteWriter a;
    for (const AdamState* st : {&c.adam, &c.adam_fidelity}) {
        a.f64(st->lr);
        a.f64(st->beta1);
        a.f64(st->beta2);
        a.f64(st->eps);
        a.u64(st->step);
        a.vec(st->m);
        a.vec(st->v);
    }
    section(out, "ADAM", a);

    ByteWriter e;
    e.i64(c.epoch);
    e.u64(c.seed);
    section(out, "EPOC", e);
    return out.bytes();
}

inline Checkpoint decode_checkpoint(std::string_view bytes, const std::string& where = "<checkpoint>") {
    detail::ByteReader r(bytes, where);
    if (bytes.size() < 4 || bytes.substr(0, 4) != "SDMC") throw ParseError(where, 0, "missing SDMC magic");
    r.take(4);
    const std::uint32_t version = r.u32();
    if (version != Checkpoint::format_version)
        throw VersionError(where + ": unsupported checkpoint version " + std::to_string(version) + " (expected " +
                           std::to_string(Checkpoint::format_version) + ")");
    const std::uint32_t count = r.u32();
    static constexpr std::array<std::string_view, 6> order{"SCHD", "NETC", "TRNC", "PARM", "ADAM", "EPOC"};
    if (count != order.size()) r.fail("expected 6 sections");

    Checkpoint c;
    for (const auto expected : order) {
        const std::string tag = r.tag();
        if (tag != expected) r.fail("expected section " + std::string(expected) + ", found '" + tag + "'");
        const std::uint64_t len = r.u64();
        detail::ByteReader s(r.take(len), where + ":" + tag);
        if (tag == "SCHD") {
            c.schedule.T = static_cast<int>(s.i64());
            c.schedule.gamma_min = s.f64();
            c.schedule.gamma_max = s.f64();
        } else if (tag == "NETC") {
            c.net.input_dim = static_cast<int>(s.i64());
            c.net.hidden_dim = static_cast<int>(s.i64());
            c.net.n_freqs = static_cast<int>(s.i64());
            c.net.time_embed = s.u32() != 0;
            c.net.n_time_freqs = static_cast<int>(s.i64());
            c.net.time_input = detail::enum_from<TimeInput>(s.u32(), 2, s, "time input");
        } else if (tag == "TRNC") {
            c.train.mode = detail::enum_from<TrainMode>(s.u32(), 2, s, "train mode");
            c.train.T = static_cast<int>(s.i64());
            c.train.K = static_cast<int>(s.i64());
            c.train.epochs = static_cast<int>(s.i64());
            c.train.batch_size = static_cast<int>(s.i64());
            c.train.lr = s.f64();
            c.train.lambda_fidelity = s.f64();
            c.train.chain_grad = detail::enum_from<ChainGrad>(s.u32(), 2, s, "chain grad");
            c.train.chain_init = detail::enum_from<ChainInit>(s.u32(), 2, s, "chain init");
            c.train.weighted_eps_loss = s.u32() != 0;
            c.train.combined_step = s.u32() != 0;
            c.train.seed = s.u64();
            c.train.eval_every = static_cast<int>(s.i64());
            c.train.eval_samples = static_cast<int>(s.i64());
            c.train.full_eval_every = static_cast<int>(s.i64());
        } else if (tag == "PARM") {
            c.params = s.vec();
        } else if (tag == "ADAM") {
            for (AdamState* st : {&c.adam, &c.adam_fidelity}) {
                st->lr = s.f64();
                st->beta1 = s.f64();
                st->beta2 = s.f64();
                st->eps = s.f64();
                st->step = s.u64();
                st->m = s.vec();
                st->v = s.vec();
            }
        } else {
            c.epoch = static_cast<int>(s.i64());
            c.seed = s.u64();
        }
        if (!s.done()) s.fail("trailing bytes in section");
    }
    if (!r.done()) r.fail("trailing bytes after last section");

    try {
        c.schedule.validate();
        c.net.validate();
    } catch (const ConfigError& e) {
        throw ParseError(where, 0, e.what());
    }
    const auto n = DenoiserNet::param_count(c.net);
    if (c.params.size() != n)
        throw ParseError(where, 0, "parameter count does not match the network config");
    for (const AdamState* st : {&c.adam, &c.adam_fidelity})
        if (st->m.size() != n || st->v.size() != n)
            throw ParseError(where, 0, "optimizer state size does not match the network config");
    return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
    const std::string bytes = encode_checkpoint(c);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes, path);
}

} // namespace sdm
