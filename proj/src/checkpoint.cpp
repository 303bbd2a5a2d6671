// Copyright (c) 2026, The mole-advice Authors
// SPDX-License-Identifier: Apache-2.0

#include "mole/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>

#include "mole/errors.hpp"

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace mole::checkpoint {
namespace {

using json = nlohmann::json;

constexpr char kMagic[4] = {'M', 'O', 'L', 'E'};

template <class T>
void put(std::vector<std::uint8_t>& out, T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
}

template <class T>
T get(std::span<const std::uint8_t> bytes, std::size_t offset) {
    T v;
    std::memcpy(&v, bytes.data() + offset, sizeof(T));
    return v;
}

std::string expert_tensor_name(const std::string& target, char which) {
    return target + (which == 'A' ? ".lora_A" : ".lora_B");
}

// Tensors of one expert in canonical order, with an optional name prefix.
void append_expert(std::vector<NamedTensor>& out, const LoraExpert& e, const std::string& prefix) {
    for (const auto& [target, pair] : e.targets()) {
        out.push_back({prefix + expert_tensor_name(target, 'A'), pair.a});
        out.push_back({prefix + expert_tensor_name(target, 'B'), pair.b});
    }
}

// Rebuilds an expert from tensors named "<prefix><target>.lora_{A,B}".
LoraExpert take_expert(const std::vector<NamedTensor>& tensors, const std::string& prefix, const std::string& id,
                       int rank, double alpha) {
    std::map<std::string, LoraPair> pairs;
    std::map<std::string, Tensor> found;
    for (const auto& t : tensors) {
        if (t.name.rfind(prefix, 0) != 0) continue;
        found.emplace(t.name.substr(prefix.size()), t.tensor);
    }
    for (const auto& [name, tensor] : found) {
        constexpr std::string_view suffix_a = ".lora_A";
        if (name.size() > suffix_a.size() && name.ends_with(suffix_a)) {
            const auto target = name.substr(0, name.size() - suffix_a.size());
            auto b = found.find(target + ".lora_B");
            if (b == found.end()) throw FormatError("checkpoint: missing " + prefix + target + ".lora_B", "");
            pairs.emplace(target, LoraPair{tensor, b->second});
        }
    }
    return LoraExpert::from_targets(id, rank, alpha, std::move(pairs));
}

json expert_meta(const std::vector<LoraExpert>& experts) {
    json ids = json::array(), ranks = json::array(), alphas = json::array();
    for (const auto& e : experts) {
        ids.push_back(e.id());
        ranks.push_back(e.rank());
        alphas.push_back(e.alpha());
    }
    return {{"expert_ids", ids}, {"ranks", ranks}, {"alphas", alphas}};
}

std::vector<NamedTensor> strip_prefix(const std::vector<NamedTensor>& tensors, const std::string& prefix) {
    std::vector<NamedTensor> out;
    for (const auto& t : tensors) {
        if (t.name.rfind(prefix, 0) == 0) out.push_back({t.name.substr(prefix.size()), t.tensor});
    }
    return out;
}

Container decode_kind(std::span<const std::uint8_t> bytes, Kind expected) {
    Container c = decode(bytes);
    const Kind k = kind_from_string(c.meta.value("kind", std::string()));
    if (k != expected) {
        throw FormatError("checkpoint: expected kind " + to_string(expected) + ", found " + to_string(k), "");
    }
    return c;
}

}  // namespace

std::string to_string(Kind kind) {
    switch (kind) {
        case Kind::base: return "base";
        case Kind::lora_expert: return "lora_expert";
        case Kind::mole: return "mole";
    }
    return "unknown";
}

Kind kind_from_string(const std::string& s) {
    if (s == "base") return Kind::base;
    if (s == "lora_expert") return Kind::lora_expert;
    if (s == "mole") return Kind::mole;
    throw FormatError("checkpoint: unknown model kind '" + s + "'", "");
}

std::vector<std::uint8_t> encode(const Container& c) {
    json entries = json::array();
    std::uint64_t offset = 0;
    for (const auto& t : c.tensors) {
        entries.push_back({{"name", t.name}, {"shape", t.tensor.shape()}, {"dtype", "f64"}, {"byte_offset", offset}});
        offset += t.tensor.size() * sizeof(double);
    }
    const std::string header = json{{"tensors", entries}, {"meta", c.meta}}.dump();

    std::vector<std::uint8_t> out;
    out.reserve(16 + header.size() + offset);
    out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
    put<std::uint32_t>(out, kFormatVersion);
    put<std::uint64_t>(out, header.size());
    out.insert(out.end(), header.begin(), header.end());
    for (const auto& t : c.tensors) {
        const auto* p = reinterpret_cast<const std::uint8_t*>(t.tensor.data().data());
        out.insert(out.end(), p, p + t.tensor.size() * sizeof(double));
    }
    return out;
}

json read_header(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw FormatError("checkpoint: bad magic", "");
    }
    const auto version = get<std::uint32_t>(bytes, 4);
    if (version != kFormatVersion) {
        throw FormatError("checkpoint: unsupported format version " + std::to_string(version), "");
    }
    const auto hlen = get<std::uint64_t>(bytes, 8);
    if (hlen > bytes.size() - 16) throw FormatError("checkpoint: truncated header", "");
    const std::string text(reinterpret_cast<const char*>(bytes.data() + 16), hlen);
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw FormatError(std::string("checkpoint: header is not valid JSON: ") + e.what(), text);
    }
}

Container decode(std::span<const std::uint8_t> bytes) {
    const json header = read_header(bytes);
    const std::size_t payload = 16 + get<std::uint64_t>(bytes, 8);
    Container c;
    c.meta = header.value("meta", json::object());
    try {
        for (const auto& e : header.at("tensors")) {
            if (e.at("dtype") != "f64") throw FormatError("checkpoint: unsupported dtype " + e.at("dtype").dump(), "");
            const auto shape = e.at("shape").get<Shape>();
            const auto off = e.at("byte_offset").get<std::uint64_t>();
            const std::size_t n = numel(shape);
            if (payload + off + n * sizeof(double) > bytes.size()) {
                throw FormatError("checkpoint: tensor " + e.at("name").get<std::string>() + " runs past end of file", "");
            }
            std::vector<double> data(n);
            std::memcpy(data.data(), bytes.data() + payload + off, n * sizeof(double));
            c.tensors.push_back({e.at("name").get<std::string>(), Tensor(shape, std::move(data))});
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("checkpoint: malformed tensor table: ") + e.what(), header.dump());
    }
    return c;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + path.string());
}

json config_to_json(const ModelConfig& c) {
    return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model}, {"n_layers", c.n_layers}, {"n_heads", c.n_heads},
            {"d_ff", c.d_ff},             {"max_seq_len", c.max_seq_len}, {"seed", c.seed}};
}

ModelConfig config_from_json(const json& j) {
    try {
        ModelConfig c;
        c.vocab_size = j.at("vocab_size").get<int>();
        c.d_model = j.at("d_model").get<int>();
        c.n_layers = j.at("n_layers").get<int>();
        c.n_heads = j.at("n_heads").get<int>();
        c.d_ff = j.at("d_ff").get<int>();
        c.max_seq_len = j.at("max_seq_len").get<int>();
        c.seed = j.at("seed").get<std::uint64_t>();
        c.validate();
        return c;
    } catch (const json::exception& e) {
        throw FormatError(std::string("checkpoint: bad model config: ") + e.what(), j.dump());
    }
}

std::vector<std::uint8_t> serialize(const BaseModel& model) {
    Container c;
    c.meta = {{"kind", "base"}, {"config", config_to_json(model.config())}, {"frozen", model.frozen()}};
    c.tensors = model.parameters();
    return encode(c);
}

std::vector<std::uint8_t> serialize(const LoraExpert& expert, const ModelConfig& config) {
    Container c;
    c.meta = expert_meta({expert});
    c.meta["kind"] = "lora_expert";
    c.meta["config"] = config_to_json(config);
    append_expert(c.tensors, expert, "");
    return encode(c);
}

std::vector<std::uint8_t> serialize(const MoleModel& model) {
    Container c;
    c.meta = expert_meta(model.experts());
    c.meta["kind"] = "mole";
    c.meta["config"] = config_to_json(model.base().config());
    json gated = json::array();
    for (const auto& l : model.gated_layers()) gated.push_back(l);
    c.meta["gated_layers"] = gated;
    for (const auto& p : model.base().parameters()) c.tensors.push_back({"base." + p.name, p.tensor});
    for (std::size_t i = 0; i < model.experts().size(); ++i) {
        append_expert(c.tensors, model.experts()[i], "experts." + std::to_string(i) + ".");
    }
    for (const auto& [layer, w] : model.gates().weights) c.tensors.push_back({"gates." + layer, w});
    return encode(c);
}

Kind kind_of(std::span<const std::uint8_t> bytes) {
    return kind_from_string(read_header(bytes).at("meta").value("kind", std::string()));
}

BaseModel deserialize_base(std::span<const std::uint8_t> bytes) {
    Container c = decode_kind(bytes, Kind::base);
    auto model = BaseModel::from_parameters(config_from_json(c.meta.at("config")), std::move(c.tensors));
    model.set_frozen(c.meta.value("frozen", true));
    return model;
}

LoadedExpert deserialize_expert(std::span<const std::uint8_t> bytes) {
    Container c = decode_kind(bytes, Kind::lora_expert);
    try {
        auto expert = take_expert(c.tensors, "", c.meta.at("expert_ids").at(0).get<std::string>(),
                                  c.meta.at("ranks").at(0).get<int>(), c.meta.at("alphas").at(0).get<double>());
        return {std::move(expert), config_from_json(c.meta.at("config"))};
    } catch (const json::exception& e) {
        throw FormatError(std::string("checkpoint: bad expert metadata: ") + e.what(), c.meta.dump());
    }
}

MoleModel deserialize_mole(std::span<const std::uint8_t> bytes) {
    Container c = decode_kind(bytes, Kind::mole);
    try {
        const ModelConfig config = config_from_json(c.meta.at("config"));
        auto base = BaseModel::from_parameters(config, strip_prefix(c.tensors, "base."));
        const auto& ids = c.meta.at("expert_ids");
        std::vector<LoraExpert> experts;
        for (std::size_t i = 0; i < ids.size(); ++i) {
            experts.push_back(take_expert(c.tensors, "experts." + std::to_string(i) + ".", ids.at(i).get<std::string>(),
                                          c.meta.at("ranks").at(i).get<int>(), c.meta.at("alphas").at(i).get<double>()));
        }
        GateNetwork gates;
        gates.num_experts = experts.size();
        for (auto& t : strip_prefix(c.tensors, "gates.")) gates.weights.emplace(t.name, t.tensor);
        return MoleModel(std::move(base), std::move(experts), std::move(gates));
    } catch (const json::exception& e) {
        throw FormatError(std::string("checkpoint: bad mixture metadata: ") + e.what(), c.meta.dump());
    }
}

void save(const std::filesystem::path& path, const BaseModel& model) { write_file(path, serialize(model)); }
void save(const std::filesystem::path& path, const LoraExpert& expert, const ModelConfig& config) {
    write_file(path, serialize(expert, config));
}
void save(const std::filesystem::path& path, const MoleModel& model) { write_file(path, serialize(model)); }

BaseModel load_base(const std::filesystem::path& path) { return deserialize_base(read_file(path)); }
LoadedExpert load_expert(const std::filesystem::path& path) { return deserialize_expert(read_file(path)); }
MoleModel load_mole(const std::filesystem::path& path) { return deserialize_mole(read_file(path)); }

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw Error("sha256: digest failed");
    }
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
    return os.str();
}

std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_file(path)); }

std::string parameter_digest(const BaseModel& model) {
    Container c;
    c.meta = {{"config", config_to_json(model.config())}};
    c.tensors = model.parameters();
    return sha256_hex(encode(c));
}

}  // namespace mole::checkpoint
