#ifndef ECOPRUNE_ARCHIVE_HPP
#define ECOPRUNE_ARCHIVE_HPP

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "denoiser.hpp"
#include "gates.hpp"
#include "tensor.hpp"

namespace ecoprune {

struct format_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Container layout: "ECOD" | 0x01 | u64 LE manifest length | JSON manifest
// {tensors:[{name,shape,offset,count}]} | raw LE float64 payload.
inline void save_archive(const std::string& path,
                         const std::vector<std::pair<std::string, const Tensor*>>& tensors) {
    nlohmann::json manifest;
    manifest["tensors"] = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : tensors) {
        manifest["tensors"].push_back({{"name", name},
                                       {"shape", t->shape},
                                       {"offset", offset},
                                       {"count", t->numel()}});
        offset += t->numel();
    }
    std::string mjson = manifest.dump();
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw format_error("archive: cannot open " + path + " for writing");
    f.write("ECOD", 4);
    char version = 0x01;
    f.write(&version, 1);
    std::uint64_t mlen = mjson.size();
    char lenbuf[8];
    for (int i = 0; i < 8; ++i) lenbuf[i] = static_cast<char>((mlen >> (8 * i)) & 0xff);
    f.write(lenbuf, 8);
    f.write(mjson.data(), static_cast<std::streamsize>(mjson.size()));
    for (const auto& [name, t] : tensors) {
        static_assert(sizeof(double) == 8);
        f.write(reinterpret_cast<const char*>(t->data.data()),
                static_cast<std::streamsize>(t->data.size() * 8));
    }
    if (!f) throw format_error("archive: write failed for " + path);
}

inline std::map<std::string, Tensor> load_archive(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw format_error("archive: cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "ECOD", 4) != 0)
        throw format_error("archive: bad magic in " + path);
    char version = 0;
    f.read(&version, 1);
    if (!f || version != 0x01) throw format_error("archive: unsupported version");
    char lenbuf[8];
    f.read(lenbuf, 8);
    if (!f) throw format_error("archive: truncated header");
    std::uint64_t mlen = 0;
    for (int i = 0; i < 8; ++i)
        mlen |= static_cast<std::uint64_t>(static_cast<unsigned char>(lenbuf[i])) << (8 * i);
    std::string mjson(mlen, '\0');
    f.read(mjson.data(), static_cast<std::streamsize>(mlen));
    if (!f) throw format_error("archive: truncated manifest");
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(mjson);
    } catch (const nlohmann::json::exception&) {
        throw format_error("archive: invalid manifest JSON");
    }
    // slurp payload, then slice per manifest entry
    std::vector<double> payload;
    {
        std::vector<char> raw((std::istreambuf_iterator<char>(f)),
                              std::istreambuf_iterator<char>());
        if (raw.size() % 8 != 0) throw format_error("archive: payload not 8-aligned");
        payload.resize(raw.size() / 8);
        std::memcpy(payload.data(), raw.data(), raw.size());
    }
    std::map<std::string, Tensor> out;
    for (const auto& e : manifest["tensors"]) {
        std::uint64_t off = e["offset"], cnt = e["count"];
        if (off + cnt > payload.size()) throw format_error("archive: entry exceeds payload");
        std::vector<std::size_t> shape = e["shape"].get<std::vector<std::size_t>>();
        std::vector<double> data(payload.begin() + off, payload.begin() + off + cnt);
        out.emplace(e["name"].get<std::string>(), Tensor(std::move(shape), std::move(data)));
    }
    return out;
}

inline void save_model(const std::string& path, const DenoiserModel& m) {
    std::vector<std::pair<std::string, const Tensor*>> tensors;
    for_each_tensor(m, [&](const std::string& n, const Tensor& t) {
        tensors.push_back({n, &t});
    });
    save_archive(path, tensors);
}

inline DenoiserModel model_from_tensors(const std::map<std::string, Tensor>& tensors,
                                        const DenoiserConfig& base_cfg) {
    DenoiserModel m;
    m.cfg = base_cfg;
    auto need = [&](const std::string& n) -> const Tensor& {
        auto it = tensors.find(n);
        if (it == tensors.end()) throw format_error("archive: missing tensor " + n);
        return it->second;
    };
    int n_blocks = 0;
    while (tensors.count("block" + std::to_string(n_blocks) + ".wo")) ++n_blocks;
    if (n_blocks == 0) throw format_error("archive: no blocks found");
    m.cfg.n_blocks = n_blocks;
    for (int b = 0; b < n_blocks; ++b) {
        std::string p = "block" + std::to_string(b) + ".";
        BlockParams blk;
        int h = 0;
        while (tensors.count(p + "head" + std::to_string(h) + ".wq")) ++h;
        for (int i = 0; i < h; ++i) {
            std::string hp = p + "head" + std::to_string(i) + ".";
            blk.heads.push_back({need(hp + "wq"), need(hp + "wk"), need(hp + "wv")});
        }
        blk.wo = need(p + "wo");
        blk.w1 = need(p + "w1");
        blk.b1 = need(p + "b1");
        blk.w2 = need(p + "w2");
        blk.b2 = need(p + "b2");
        blk.ln1_g = need(p + "ln1_g");
        blk.ln1_b = need(p + "ln1_b");
        blk.ln2_g = need(p + "ln2_g");
        blk.ln2_b = need(p + "ln2_b");
        m.blocks.push_back(std::move(blk));
    }
    m.cond_embed = need("cond_embed");
    m.time_w = need("time_w");
    m.time_b = need("time_b");
    m.cfg.d_model = static_cast<int>(m.time_w.shape[0]);
    m.cfg.n_conditions = static_cast<int>(m.cond_embed.shape[0]);
    return m;
}

inline DenoiserModel load_model(const std::string& path, const DenoiserConfig& base_cfg) {
    return model_from_tensors(load_archive(path), base_cfg);
}

inline void save_lambda(const std::string& path, const GateParams& gp) {
    std::vector<std::pair<std::string, const Tensor*>> tensors;
    for (const auto& g : gp.groups) tensors.push_back({"lambda." + g.name, &g.lambda});
    save_archive(path, tensors);
}

inline GateParams load_lambda(const std::string& path) {
    GateParams gp;
    for (auto& [name, t] : load_archive(path)) {
        if (name.rfind("lambda.", 0) != 0)
            throw format_error("archive: unexpected tensor " + name + " in lambda archive");
        gp.groups.push_back({name.substr(7), std::move(t)});
    }
    // map iteration is name-sorted; restore block order
    std::stable_sort(gp.groups.begin(), gp.groups.end(),
                     [](const GateGroup& a, const GateGroup& b) {
                         auto key = [](const std::string& s) {
                             std::size_t dot = s.find('.');
                             int blk = std::stoi(s.substr(5, dot - 5));
                             int kind = s.ends_with(".heads") ? 0 : 1;
                             return std::make_pair(blk, kind);
                         };
                         return key(a.name) < key(b.name);
                     });
    return gp;
}

}  // namespace ecoprune

#endif
