#include "cxrlm/checkpoint.hpp"

#include "cxrlm/errors.hpp"

#include <json.hpp>

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace cxrlm::model {

namespace {

constexpr char kMagic[4] = {'K', 'X', 'T', 'I'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

struct Reader {
    const std::string& buf;
    size_t pos = 0;

    explicit Reader(const std::string& b) : buf(b) {}

    void need(size_t n) const {
        if (pos + n > buf.size()) throw DataError("checkpoint: truncated file");
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    double f64() {
        need(8);
        uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 8;
        double v;
        std::memcpy(&v, &bits, sizeof(v));
        return v;
    }
    std::string bytes(size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
    bool done() const { return pos == buf.size(); }
};

std::string config_to_json(const ModelConfig& cfg) {
    nlohmann::ordered_json j;
    j["d_model"] = cfg.d_model;
    j["n_layers"] = cfg.n_layers;
    j["n_heads"] = cfg.n_heads;
    j["d_head"] = cfg.d_head;
    j["d_ff"] = cfg.d_ff;
    j["d_know"] = cfg.d_know;
    j["vocab_size"] = cfg.vocab_size;
    j["max_seq_len"] = cfg.max_seq_len;
    return j.dump();
}

ModelConfig config_from_json(const std::string& text) {
    nlohmann::ordered_json j;
    try {
        j = nlohmann::ordered_json::parse(text);
    } catch (const std::exception& e) {
        throw DataError(std::string("checkpoint: bad config blob: ") + e.what());
    }
    ModelConfig cfg;
    cfg.d_model = j.at("d_model").get<int32_t>();
    cfg.n_layers = j.at("n_layers").get<int32_t>();
    cfg.n_heads = j.at("n_heads").get<int32_t>();
    cfg.d_head = j.at("d_head").get<int32_t>();
    cfg.d_ff = j.at("d_ff").get<int32_t>();
    cfg.d_know = j.at("d_know").get<int32_t>();
    cfg.vocab_size = j.at("vocab_size").get<int32_t>();
    cfg.max_seq_len = j.at("max_seq_len").get<int32_t>();
    return cfg;
}

} // namespace

void save_checkpoint(const ModelParams& params, const std::string& path) {
    std::string out;
    out.append(kMagic, 4);
    put_u32(out, kVersion);
    const std::string cfg_blob = config_to_json(params.cfg);
    put_u32(out, static_cast<uint32_t>(cfg_blob.size()));
    out += cfg_blob;

    for (const auto& [name, m] : params.tensors()) {
        put_u32(out, static_cast<uint32_t>(name.size()));
        out += name;
        if (m->rows == 1) { // biases, gains and other vectors
            put_u32(out, 1);
            put_u32(out, static_cast<uint32_t>(m->cols));
        } else {
            put_u32(out, 2);
            put_u32(out, static_cast<uint32_t>(m->rows));
            put_u32(out, static_cast<uint32_t>(m->cols));
        }
        for (double v : m->a) put_f64(out, v);
    }

    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw DataError("checkpoint: cannot write '" + tmp + "'");
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
        if (!f) throw DataError("checkpoint: write failed for '" + tmp + "'");
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw DataError("checkpoint: rename to '" + path + "' failed");
}

ModelParams load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("checkpoint: cannot open '" + path + "'");
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    Reader r(buf);
    if (r.bytes(4) != std::string(kMagic, 4)) throw DataError("checkpoint: bad magic");
    if (r.u32() != kVersion) throw DataError("checkpoint: unsupported version");
    const uint32_t cfg_len = r.u32();
    ModelConfig cfg = config_from_json(r.bytes(cfg_len));
    cfg.validate();

    ModelParams params;
    params.cfg = cfg;
    params.layers.resize(static_cast<size_t>(cfg.n_layers));

    // read tensors until end of file; every expected name must appear once
    std::vector<std::pair<std::string, Matrix>> loaded;
    while (!r.done()) {
        const uint32_t name_len = r.u32();
        std::string name = r.bytes(name_len);
        const uint32_t rank = r.u32();
        size_t rows = 1, cols = 1;
        if (rank == 1) {
            cols = r.u32();
        } else if (rank == 2) {
            rows = r.u32();
            cols = r.u32();
        } else {
            throw DataError("checkpoint: tensor '" + name + "' has unsupported rank");
        }
        Matrix m(rows, cols);
        for (double& v : m.a) v = r.f64();
        loaded.emplace_back(std::move(name), std::move(m));
    }

    auto slots = params.tensors();
    if (loaded.size() != slots.size())
        throw DataError("checkpoint: expected " + std::to_string(slots.size()) + " tensors, found " +
                        std::to_string(loaded.size()));
    for (size_t i = 0; i < slots.size(); ++i) {
        if (loaded[i].first != slots[i].first)
            throw DataError("checkpoint: tensor '" + loaded[i].first + "' out of order (expected '" +
                            slots[i].first + "')");
        *slots[i].second = std::move(loaded[i].second);
    }

    // shape sanity against the config blob
    const size_t d = static_cast<size_t>(cfg.d_model);
    if (params.token_embedding.rows != static_cast<size_t>(cfg.vocab_size) ||
        params.token_embedding.cols != d)
        throw DataError("checkpoint: token embedding shape mismatch");
    if (params.positional_embedding.rows != static_cast<size_t>(cfg.max_seq_len) ||
        params.positional_embedding.cols != d)
        throw DataError("checkpoint: positional embedding shape mismatch");
    if (params.w_out.rows != d || params.w_out.cols != static_cast<size_t>(cfg.vocab_size))
        throw DataError("checkpoint: output head shape mismatch");
    if (params.w_proj_k.rows != d || params.w_proj_k.cols != static_cast<size_t>(cfg.d_know))
        throw DataError("checkpoint: knowledge projection shape mismatch");
    return params;
}

} // namespace cxrlm::model
