#pragma once
// .mgm model bundles: a JSON manifest {formatVersion, layerSpecs[],
// tensorIndex[{name, shape, byteOffset, byteLength}]} terminated by a
// newline, followed by raw little-endian f64 blobs in index order.
// Round trips are bit-exact.
#include "manigrad/io.hpp"
#include "manigrad/network.hpp"
#include "manigrad/train.hpp"

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace manigrad {

inline constexpr std::int64_t kMgmFormatVersion = 1;

// Ordered set of named networks; a VAE stores {encoder, decoder}, a
// classifier stores {net}.
struct ModelBundle {
    std::vector<std::pair<std::string, Network>> nets;

    const Network* find(const std::string& name) const {
        for (const auto& [n, net] : nets)
            if (n == name) return &net;
        return nullptr;
    }
};

inline std::string mgm_bytes(const ModelBundle& bundle) {
    if (bundle.nets.empty()) fail("mgm_write: empty bundle");
    Json layerSpecs = Json::array();
    Json tensorIndex = Json::array();
    std::string blobs;
    std::int64_t off = 0;
    const auto add_tensor = [&](const std::string& name, const Tensor& t) {
        const std::int64_t len = t.size() * static_cast<std::int64_t>(sizeof(double));
        tensorIndex.push_back(Json{{"name", name},
                                   {"shape", t.shape},
                                   {"byteOffset", off},
                                   {"byteLength", len}});
        detail::append_f64_le(blobs, t.data.data(), t.data.size());
        off += len;
    };
    for (const auto& [name, net] : bundle.nets) {
        if (net.layers.empty()) fail("mgm_write: network '" + name + "' has no layers");
        if (name.find('.') != std::string::npos || name.empty())
            fail("mgm_write: bad network name '" + name + "'");
        for (std::size_t i = 0; i < net.layers.size(); ++i) {
            const Layer& L = net.layers[i];
            layerSpecs.push_back(Json{{"network", name},
                                      {"layer", static_cast<std::int64_t>(i)},
                                      {"act", act_name(L.act)}});
            const std::string stem = name + "." + std::to_string(i);
            add_tensor(stem + ".W", L.W);
            add_tensor(stem + ".b", L.b);
        }
    }
    const Json manifest{{"formatVersion", kMgmFormatVersion},
                        {"layerSpecs", layerSpecs},
                        {"tensorIndex", tensorIndex}};
    return manifest.dump() + "\n" + blobs;
}

inline void mgm_write(const std::string& path, const ModelBundle& bundle) {
    write_file_atomic(path, mgm_bytes(bundle));
}

inline ModelBundle mgm_parse(const std::string& bytes, const std::string& what) {
    const std::size_t nl = bytes.find('\n');
    if (nl == std::string::npos)
        throw CorruptionError(what + ": manifest not newline-terminated");
    Json m;
    try {
        m = Json::parse(bytes.substr(0, nl));
    } catch (const Json::exception& e) {
        throw CorruptionError(what + ": manifest is not valid JSON: " + e.what());
    }
    if (!m.contains("formatVersion") || !m["formatVersion"].is_number_integer())
        throw CorruptionError(what + ": missing formatVersion");
    if (m["formatVersion"].get<std::int64_t>() != kMgmFormatVersion)
        throw FormatVersionError(
            what + ": formatVersion " + m["formatVersion"].dump() +
            ", this build reads version " + std::to_string(kMgmFormatVersion));
    if (!m.contains("layerSpecs") || !m["layerSpecs"].is_array() ||
        !m.contains("tensorIndex") || !m["tensorIndex"].is_array())
        throw CorruptionError(what + ": manifest needs layerSpecs[] and tensorIndex[]");

    const char* blob = bytes.data() + nl + 1;
    const std::int64_t blobLen = static_cast<std::int64_t>(bytes.size() - nl - 1);
    std::map<std::string, Tensor> tensors;
    std::int64_t cursor = 0;
    ModelBundle bundle;
    try {
    for (const auto& e : m["tensorIndex"]) {
        if (!e.contains("name") || !e.contains("shape") ||
            !e.contains("byteOffset") || !e.contains("byteLength"))
            throw CorruptionError(what + ": incomplete tensorIndex entry");
        const std::string name = e["name"].get<std::string>();
        Shape shape;
        std::int64_t numel = 1;
        for (const auto& s : e["shape"]) {
            if (!s.is_number_integer() || s.get<std::int64_t>() <= 0)
                throw CorruptionError(what + ": tensor '" + name +
                                      "': non-positive shape extent");
            shape.push_back(s.get<std::int64_t>());
            numel *= shape.back();
            if (numel > kNtfMaxNumel)
                throw CorruptionError(what + ": tensor '" + name +
                                      "' exceeds element cap");
        }
        if (shape.empty())
            throw CorruptionError(what + ": tensor '" + name + "' has empty shape");
        const std::int64_t offset = e["byteOffset"].get<std::int64_t>();
        const std::int64_t length = e["byteLength"].get<std::int64_t>();
        if (length != numel * static_cast<std::int64_t>(sizeof(double)))
            throw CorruptionError(what + ": tensor '" + name + "': byteLength " +
                                  std::to_string(length) + " != shape " +
                                  shape_str(shape) + " * 8");
        if (offset != cursor)
            throw CorruptionError(what + ": tensor '" + name +
                                  "': byteOffset out of index order");
        if (offset + length > blobLen)
            throw CorruptionError(what + ": tensor '" + name +
                                  "': blob truncated, need " +
                                  std::to_string(offset + length) + " bytes, have " +
                                  std::to_string(blobLen));
        Tensor t(shape);
        detail::load_f64_le(t.data.data(), blob + offset,
                            static_cast<std::size_t>(numel));
        if (!tensors.emplace(name, std::move(t)).second)
            throw CorruptionError(what + ": duplicate tensor '" + name + "'");
        cursor = offset + length;
    }
    if (cursor != blobLen)
        throw CorruptionError(what + ": " + std::to_string(blobLen - cursor) +
                              " trailing blob bytes");

    for (const auto& spec : m["layerSpecs"]) {
        if (!spec.contains("network") || !spec.contains("layer") ||
            !spec.contains("act"))
            throw CorruptionError(what + ": incomplete layerSpecs entry");
        const std::string name = spec["network"].get<std::string>();
        Network* net = nullptr;
        for (auto& [n, candidate] : bundle.nets)
            if (n == name) net = &candidate;
        if (!net) net = &bundle.nets.emplace_back(name, Network{}).second;
        const std::int64_t idx = spec["layer"].get<std::int64_t>();
        if (idx != static_cast<std::int64_t>(net->layers.size()))
            throw CorruptionError(what + ": layerSpecs for '" + name +
                                  "' out of order");
        const std::string stem = name + "." + std::to_string(idx);
        const auto W = tensors.find(stem + ".W");
        const auto b = tensors.find(stem + ".b");
        if (W == tensors.end() || b == tensors.end())
            throw CorruptionError(what + ": missing tensors for layer " + stem);
        net->add_layer(W->second, b->second,
                       act_from_name(spec["act"].get<std::string>()));
    }
    } catch (const IoError&) {
        throw;
    } catch (const Error& e) {
        throw CorruptionError(what + ": " + e.what());
    } catch (const Json::exception& e) {
        throw CorruptionError(what + ": bad manifest entry: " + e.what());
    }
    if (bundle.nets.empty())
        throw CorruptionError(what + ": bundle has no networks");
    return bundle;
}

inline ModelBundle mgm_read(const std::string& path) {
    return mgm_parse(read_file(path), path);
}

// VAE / classifier convenience wrappers. A VAE's latent_dim is recovered
// from the decoder input width.
inline void save_vae(const std::string& path, const VAE& vae) {
    vae.check_trained();
    mgm_write(path, ModelBundle{{{"encoder", vae.encoder}, {"decoder", vae.decoder}}});
}

inline VAE load_vae(const std::string& path) {
    const ModelBundle b = mgm_read(path);
    const Network* enc = b.find("encoder");
    const Network* dec = b.find("decoder");
    if (!enc || !dec)
        throw CorruptionError(path + ": vae bundle needs networks 'encoder' and 'decoder'");
    VAE v;
    v.encoder = *enc;
    v.decoder = *dec;
    v.latent_dim = dec->dim_in();
    try {
        v.check_trained();
    } catch (const Error& e) {
        throw CorruptionError(path + ": " + e.what());
    }
    return v;
}

inline void save_classifier(const std::string& path, const Network& net) {
    if (net.layers.empty()) fail("save_classifier: empty network");
    mgm_write(path, ModelBundle{{{"net", net}}});
}

inline Network load_classifier(const std::string& path) {
    const ModelBundle b = mgm_read(path);
    const Network* net = b.find("net");
    if (!net)
        throw CorruptionError(path + ": classifier bundle needs network 'net'");
    return *net;
}

} // namespace manigrad
