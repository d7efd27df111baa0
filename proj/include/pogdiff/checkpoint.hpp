#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "pogdiff/errors.hpp"
#include "pogdiff/mlp.hpp"

namespace pogdiff {

/// Text checkpoint for MlpDenoiser:
///
///   POGDIFF-MLP 1
///   data_dim <d>
///   cond_dim <c>
///   num_steps <T>
///   activation <tanh|relu|identity>
///   widths <count> <w0> <w1> ...
///   param <name> <count>
///   <count values, 17 significant digits, one per line>
///   ...
///   end
inline constexpr std::string_view kCheckpointMagic = "POGDIFF-MLP";
inline constexpr int kCheckpointVersion = 1;

inline void write_checkpoint(std::ostream& os, const MlpDenoiser& model) {
    os << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
    os << "data_dim " << model.data_dim << '\n';
    os << "cond_dim " << model.cond_dim << '\n';
    os << "num_steps " << model.num_steps << '\n';
    os << "activation " << activation_name(model.shape.activation) << '\n';
    os << "widths " << model.shape.widths.size();
    for (auto w : model.shape.widths) os << ' ' << w;
    os << '\n';
    os << std::setprecision(17);
    for (const auto& [name, t] : model.params) {
        os << "param " << name << ' ' << t.size() << '\n';
        for (double v : t.values()) os << v << '\n';
    }
    os << "end\n";
}

inline MlpDenoiser read_checkpoint(std::istream& is) {
    auto expect = [&](std::string_view key) {
        std::string k;
        if (!(is >> k) || k != key)
            throw ContractError("checkpoint: expected '" + std::string(key) + "', got '" + k + "'");
    };
    std::string magic;
    int version = 0;
    if (!(is >> magic >> version) || magic != kCheckpointMagic)
        throw ContractError("checkpoint: bad magic");
    if (version != kCheckpointVersion)
        throw ContractError("checkpoint: unsupported version " + std::to_string(version));
    MlpDenoiser m;
    std::string act;
    std::size_t count = 0;
    expect("data_dim");
    is >> m.data_dim;
    expect("cond_dim");
    is >> m.cond_dim;
    expect("num_steps");
    is >> m.num_steps;
    expect("activation");
    is >> act;
    m.shape.activation = parse_activation(act);
    expect("widths");
    is >> count;
    m.shape.widths.resize(count);
    for (auto& w : m.shape.widths) is >> w;
    if (!is) throw ContractError("checkpoint: truncated header");
    m.validate();

    ParameterSet reference;
    Rng dummy(0);
    mlp_init(reference, m.shape, "", dummy);
    for (;;) {
        std::string tag;
        if (!(is >> tag)) throw ContractError("checkpoint: missing 'end'");
        if (tag == "end") break;
        if (tag != "param") throw ContractError("checkpoint: unexpected token '" + tag + "'");
        std::string name;
        is >> name >> count;
        auto it = reference.find(name);
        if (it == reference.end()) throw ContractError("checkpoint: unknown parameter '" + name + "'");
        if (count != it->second.size()) throw ShapeError("checkpoint: size mismatch for '" + name + "'");
        Tensor t(it->second.shape());
        for (auto& v : t.data()) is >> v;
        if (!is) throw ContractError("checkpoint: truncated payload for '" + name + "'");
        m.params[name] = std::move(t);
    }
    if (m.params.size() != reference.size()) throw ContractError("checkpoint: missing parameters");
    return m;
}

inline void save_checkpoint(const std::filesystem::path& path, const MlpDenoiser& model) {
    std::ofstream os(path);
    if (!os) throw Error("cannot open " + path.string() + " for writing");
    write_checkpoint(os, model);
}

inline MlpDenoiser load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw Error("cannot open " + path.string());
    return read_checkpoint(is);
}

}  // namespace pogdiff
