#include "diffclone/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <utility>

#include "diffclone/errors.hpp"

namespace diffclone {

std::uint64_t fnv1a64(std::span<const unsigned char> bytes) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 1099511628211ULL;
    }
    return h;
}

std::uint64_t fnv1a64_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string bytes = ss.str();
    return fnv1a64(
        std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(bytes.data()),
                                       bytes.size()));
}

namespace {

constexpr char kMagic[] = "DCK1\n";
constexpr std::size_t kMagicLen = 5;

void put_u64_le(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64_le(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

}  // namespace

const std::string& Checkpoint::config_value(const std::string& key) const {
    for (const auto& [k, v] : config)
        if (k == key) return v;
    throw FormatError("checkpoint: missing config key '" + key + "'");
}

std::optional<std::string> Checkpoint::find(const std::string& key) const {
    for (const auto& [k, v] : config)
        if (k == key) return v;
    return std::nullopt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::string payload;
    for (const auto& [key, value] : ckpt.config) {
        if (key.empty() || key.find('=') != std::string::npos ||
            key.find('\n') != std::string::npos || value.find('\n') != std::string::npos) {
            throw UsageError("checkpoint: config keys/values must be single-line, '='-free keys");
        }
        payload += key;
        payload += '=';
        payload += value;
        payload += '\n';
    }
    payload += '\n';
    for (double v : ckpt.values) put_u64_le(payload, std::bit_cast<std::uint64_t>(v));

    std::string file(kMagic, kMagicLen);
    file += payload;
    put_u64_le(file, fnv1a64(std::span<const unsigned char>(
                         reinterpret_cast<const unsigned char*>(payload.data()), payload.size())));

    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path + " for writing");
    out.write(file.data(), static_cast<std::streamsize>(file.size()));
    if (!out) throw Error("failed while writing " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string bytes = ss.str();

    if (bytes.size() < kMagicLen + 1 + 8 || bytes.compare(0, kMagicLen, kMagic, kMagicLen) != 0)
        throw FormatError(path + ": not a DCK1 checkpoint");

    const std::size_t payload_len = bytes.size() - kMagicLen - 8;
    const auto* payload = reinterpret_cast<const unsigned char*>(bytes.data()) + kMagicLen;
    const std::uint64_t want = get_u64_le(payload + payload_len);
    const std::uint64_t got = fnv1a64(std::span<const unsigned char>(payload, payload_len));
    if (want != got) throw CorruptionError(path + ": checkpoint checksum mismatch");

    Checkpoint ckpt;
    std::size_t pos = 0;
    while (true) {
        std::size_t eol = pos;
        while (eol < payload_len && payload[eol] != '\n') ++eol;
        if (eol == payload_len) throw FormatError(path + ": unterminated config block");
        if (eol == pos) {  // blank line ends the config block
            pos = eol + 1;
            break;
        }
        const std::string line(reinterpret_cast<const char*>(payload) + pos, eol - pos);
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos || eq == 0)
            throw FormatError(path + ": malformed config line '" + line + "'");
        ckpt.config.emplace_back(line.substr(0, eq), line.substr(eq + 1));
        pos = eol + 1;
    }

    const std::size_t array_len = payload_len - pos;
    if (array_len % 8 != 0) throw FormatError(path + ": parameter payload is not 8-byte aligned");
    ckpt.values.resize(array_len / 8);
    for (std::size_t i = 0; i < ckpt.values.size(); ++i)
        ckpt.values[i] = std::bit_cast<double>(get_u64_le(payload + pos + 8 * i));
    return ckpt;
}

// --- typed policy checkpoints ----------------------------------------------------

namespace {

int parse_int(const Checkpoint& ckpt, const std::string& key) {
    const std::string& v = ckpt.config_value(key);
    try {
        std::size_t used = 0;
        const int out = std::stoi(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw FormatError("checkpoint: bad integer for '" + key + "': " + v);
    }
}

std::string join_ints(const std::vector<int>& xs) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(xs[i]);
    }
    return out;
}

std::vector<int> parse_int_list(const Checkpoint& ckpt, const std::string& key) {
    const std::string& v = ckpt.config_value(key);
    std::vector<int> out;
    if (v.empty()) return out;
    std::size_t pos = 0;
    while (pos <= v.size()) {
        const std::size_t comma = std::min(v.find(',', pos), v.size());
        const std::string item = v.substr(pos, comma - pos);
        try {
            std::size_t used = 0;
            out.push_back(std::stoi(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw FormatError("checkpoint: bad integer list for '" + key + "': " + v);
        }
        pos = comma + 1;
        if (comma == v.size()) break;
    }
    return out;
}

void append_params(Checkpoint& ckpt, const std::vector<std::pair<std::string, Tensor>>& params) {
    for (const auto& [name, p] : params) {
        const auto d = p.data();
        ckpt.values.insert(ckpt.values.end(), d.begin(), d.end());
    }
}

void fill_params(const std::vector<std::pair<std::string, Tensor>>& params,
                 const std::vector<double>& values, std::size_t& offset) {
    for (const auto& [name, p] : params) {
        const std::size_t n = static_cast<std::size_t>(p.size());
        if (offset + n > values.size())
            throw FormatError("checkpoint: payload too short for the declared architecture");
        Tensor t = p;
        auto d = t.data_mut();
        std::copy(values.begin() + static_cast<std::ptrdiff_t>(offset),
                  values.begin() + static_cast<std::ptrdiff_t>(offset + n), d.begin());
        offset += n;
    }
}

void require_consumed(const Checkpoint& ckpt, std::size_t offset) {
    if (offset != ckpt.values.size())
        throw FormatError("checkpoint: payload size does not match the declared architecture");
}

void require_kind(const Checkpoint& ckpt, const std::string& want) {
    const std::string& kind = ckpt.config_value("kind");
    if (kind != want)
        throw FormatError("checkpoint kind mismatch: expected " + want + ", found " + kind);
}

void append_encoder_config(Checkpoint& ckpt, const EncoderNet* encoder) {
    if (encoder == nullptr) {
        ckpt.config.emplace_back("encoder", "none");
        return;
    }
    const EncoderConfig& cfg = encoder->config();
    ckpt.config.emplace_back("encoder", "mlp");
    ckpt.config.emplace_back("encoder.obs_dim", std::to_string(cfg.obs_dim));
    ckpt.config.emplace_back("encoder.embed_dim", std::to_string(cfg.embed_dim));
    ckpt.config.emplace_back("encoder.hidden", join_ints(cfg.hidden));
}

// Reads the trailing encoder parameters (if any) and returns the encoding
// closure to attach to the policy.
ObsEncodeFn read_encoder(const Checkpoint& ckpt, std::size_t& offset) {
    const std::string& mode = ckpt.config_value("encoder");
    if (mode == "none") return identity_encoder();
    if (mode != "mlp") throw FormatError("checkpoint: unknown encoder mode '" + mode + "'");
    EncoderConfig cfg;
    cfg.obs_dim = parse_int(ckpt, "encoder.obs_dim");
    cfg.embed_dim = parse_int(ckpt, "encoder.embed_dim");
    cfg.hidden = parse_int_list(ckpt, "encoder.hidden");
    EncoderNet net = EncoderNet::build(cfg, 0);
    fill_params(net.named_parameters(), ckpt.values, offset);
    return net.as_encode_fn();
}

}  // namespace

std::string checkpoint_kind(const std::string& path) {
    return load_checkpoint(path).config_value("kind");
}

void save_diffclone_checkpoint(const DiffClonePolicy& policy, const EncoderNet* encoder,
                               const std::string& path) {
    const DenoiserConfig& cfg = policy.denoiser.config();
    Checkpoint ckpt;
    ckpt.config.emplace_back("kind", "diffclone");
    ckpt.config.emplace_back("format_version", "1");
    ckpt.config.emplace_back("action_dim", std::to_string(cfg.action_dim));
    ckpt.config.emplace_back("horizon", std::to_string(cfg.horizon));
    ckpt.config.emplace_back("channels", join_ints(cfg.channels));
    ckpt.config.emplace_back("kernel", std::to_string(cfg.kernel));
    ckpt.config.emplace_back("groups", std::to_string(cfg.groups));
    ckpt.config.emplace_back("time_embed_dim", std::to_string(cfg.time_embed_dim));
    ckpt.config.emplace_back("obs_dim", std::to_string(cfg.obs_dim));
    ckpt.config.emplace_back("timesteps", std::to_string(policy.schedule.T()));
    ckpt.config.emplace_back("exec_horizon", std::to_string(policy.exec_horizon));
    append_encoder_config(ckpt, encoder);
    append_params(ckpt, policy.denoiser.named_parameters());
    if (encoder != nullptr) append_params(ckpt, encoder->named_parameters());
    save_checkpoint(ckpt, path);
}

DiffClonePolicy load_diffclone_checkpoint(const std::string& path) {
    const Checkpoint ckpt = load_checkpoint(path);
    require_kind(ckpt, "diffclone");
    DenoiserConfig cfg;
    cfg.action_dim = parse_int(ckpt, "action_dim");
    cfg.horizon = parse_int(ckpt, "horizon");
    cfg.channels = parse_int_list(ckpt, "channels");
    cfg.kernel = parse_int(ckpt, "kernel");
    cfg.groups = parse_int(ckpt, "groups");
    cfg.time_embed_dim = parse_int(ckpt, "time_embed_dim");
    cfg.obs_dim = parse_int(ckpt, "obs_dim");

    DiffClonePolicy policy;
    policy.denoiser = DenoiserNet::build(cfg, 0);
    std::size_t offset = 0;
    fill_params(policy.denoiser.named_parameters(), ckpt.values, offset);
    policy.schedule = NoiseSchedule::square_cosine(parse_int(ckpt, "timesteps"));
    policy.horizon = cfg.horizon;
    policy.exec_horizon = parse_int(ckpt, "exec_horizon");
    policy.encode = read_encoder(ckpt, offset);
    require_consumed(ckpt, offset);
    // Normalization stats live in the sidecar; the caller attaches them.
    return policy;
}

void save_bc_checkpoint(const BcPolicy& policy, const EncoderNet* encoder,
                        const std::string& path) {
    const MlpConfig& cfg = policy.net.config();
    Checkpoint ckpt;
    ckpt.config.emplace_back("kind", "bc");
    ckpt.config.emplace_back("format_version", "1");
    ckpt.config.emplace_back("in_dim", std::to_string(cfg.in_dim));
    ckpt.config.emplace_back("hidden", join_ints(cfg.hidden));
    ckpt.config.emplace_back("out_dim", std::to_string(cfg.out_dim));
    append_encoder_config(ckpt, encoder);
    append_params(ckpt, policy.net.named_parameters());
    if (encoder != nullptr) append_params(ckpt, encoder->named_parameters());
    save_checkpoint(ckpt, path);
}

BcPolicy load_bc_checkpoint(const std::string& path) {
    const Checkpoint ckpt = load_checkpoint(path);
    require_kind(ckpt, "bc");
    MlpConfig cfg;
    cfg.in_dim = parse_int(ckpt, "in_dim");
    cfg.hidden = parse_int_list(ckpt, "hidden");
    cfg.out_dim = parse_int(ckpt, "out_dim");

    BcPolicy policy;
    policy.net = Mlp::build(cfg, 0);
    std::size_t offset = 0;
    fill_params(policy.net.named_parameters(), ckpt.values, offset);
    policy.encode = read_encoder(ckpt, offset);
    require_consumed(ckpt, offset);
    return policy;
}

void save_vinn_checkpoint(const VinnPolicy& policy, const EncoderNet* encoder,
                          const std::string& path) {
    if (policy.embeddings.empty()) throw UsageError("vinn checkpoint: empty memory");
    Checkpoint ckpt;
    ckpt.config.emplace_back("kind", "vinn");
    ckpt.config.emplace_back("format_version", "1");
    ckpt.config.emplace_back("k", std::to_string(policy.k));
    ckpt.config.emplace_back("entries", std::to_string(policy.embeddings.size()));
    ckpt.config.emplace_back("embed_dim", std::to_string(policy.embeddings.front().size()));
    ckpt.config.emplace_back("action_dim", std::to_string(policy.actions.front().size()));
    append_encoder_config(ckpt, encoder);
    for (const auto& row : policy.embeddings)
        ckpt.values.insert(ckpt.values.end(), row.begin(), row.end());
    for (const auto& row : policy.actions)
        ckpt.values.insert(ckpt.values.end(), row.begin(), row.end());
    if (encoder != nullptr) append_params(ckpt, encoder->named_parameters());
    save_checkpoint(ckpt, path);
}

VinnPolicy load_vinn_checkpoint(const std::string& path) {
    const Checkpoint ckpt = load_checkpoint(path);
    require_kind(ckpt, "vinn");
    const int k = parse_int(ckpt, "k");
    const int entries = parse_int(ckpt, "entries");
    const int embed_dim = parse_int(ckpt, "embed_dim");
    const int action_dim = parse_int(ckpt, "action_dim");
    if (entries < 1 || embed_dim < 1 || action_dim < 1)
        throw FormatError("checkpoint: vinn memory dimensions must be positive");

    VinnPolicy policy;
    policy.k = k;
    std::size_t offset = 0;
    for (int i = 0; i < entries; ++i) {
        if (offset + static_cast<std::size_t>(embed_dim) > ckpt.values.size())
            throw FormatError("checkpoint: payload too short for the declared architecture");
        policy.embeddings.emplace_back(
            ckpt.values.begin() + static_cast<std::ptrdiff_t>(offset),
            ckpt.values.begin() + static_cast<std::ptrdiff_t>(offset + embed_dim));
        offset += static_cast<std::size_t>(embed_dim);
    }
    for (int i = 0; i < entries; ++i) {
        if (offset + static_cast<std::size_t>(action_dim) > ckpt.values.size())
            throw FormatError("checkpoint: payload too short for the declared architecture");
        policy.actions.emplace_back(
            ckpt.values.begin() + static_cast<std::ptrdiff_t>(offset),
            ckpt.values.begin() + static_cast<std::ptrdiff_t>(offset + action_dim));
        offset += static_cast<std::size_t>(action_dim);
    }
    policy.encode = read_encoder(ckpt, offset);
    require_consumed(ckpt, offset);
    return policy;
}

void save_encoder_checkpoint(const EncoderNet& encoder, const std::string& path) {
    const EncoderConfig& cfg = encoder.config();
    Checkpoint ckpt;
    ckpt.config.emplace_back("kind", "encoder");
    ckpt.config.emplace_back("format_version", "1");
    ckpt.config.emplace_back("obs_dim", std::to_string(cfg.obs_dim));
    ckpt.config.emplace_back("embed_dim", std::to_string(cfg.embed_dim));
    ckpt.config.emplace_back("hidden", join_ints(cfg.hidden));
    append_params(ckpt, encoder.named_parameters());
    save_checkpoint(ckpt, path);
}

EncoderNet load_encoder_checkpoint(const std::string& path) {
    const Checkpoint ckpt = load_checkpoint(path);
    require_kind(ckpt, "encoder");
    EncoderConfig cfg;
    cfg.obs_dim = parse_int(ckpt, "obs_dim");
    cfg.embed_dim = parse_int(ckpt, "embed_dim");
    cfg.hidden = parse_int_list(ckpt, "hidden");
    EncoderNet net = EncoderNet::build(cfg, 0);
    std::size_t offset = 0;
    fill_params(net.named_parameters(), ckpt.values, offset);
    require_consumed(ckpt, offset);
    return net;
}

}  // namespace diffclone
