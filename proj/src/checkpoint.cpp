#include "segfuse/checkpoint.hpp"

#include <string>

#include "byte_io.hpp"

namespace segfuse::ckpt {

namespace {

using detail::ByteReader;
using detail::ByteWriter;

constexpr char kMagic[4] = {'C', 'K', 'P', 'T'};

struct RawParam {
    std::string name;
    Shape shape;
    std::vector<float> values;
};

void write_param(ByteWriter& w, const std::string& name, const Tensor& value) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.text(name);
    w.u32(static_cast<std::uint32_t>(value.ndim()));
    for (std::size_t d : value.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (float v : value.values()) w.f32(v);
}

void write_stream_record(ByteWriter& w, const nn::NetworkConfig& cfg, const StreamInfo& info) {
    w.u32(static_cast<std::uint32_t>(cfg.in_channels));
    w.u32(static_cast<std::uint32_t>(cfg.num_classes));
    w.u32(static_cast<std::uint32_t>(cfg.stage_widths.size()));
    for (std::size_t width : cfg.stage_widths) w.u32(static_cast<std::uint32_t>(width));
    w.u32(static_cast<std::uint32_t>(cfg.convs_per_stage));
    w.u32(static_cast<std::uint32_t>(cfg.tap_stage));
    w.u32(static_cast<std::uint32_t>(info.modality));
    w.u32(info.window);
}

std::pair<nn::NetworkConfig, StreamInfo> read_stream_record(ByteReader& r) {
    nn::NetworkConfig cfg;
    cfg.in_channels = r.u32();
    cfg.num_classes = r.u32();
    const std::uint32_t stages = r.u32();
    r.need(static_cast<std::size_t>(stages) * 4);
    cfg.stage_widths.assign(stages, 0);
    for (auto& width : cfg.stage_widths) width = r.u32();
    cfg.convs_per_stage = r.u32();
    cfg.tap_stage = r.u32();
    StreamInfo info;
    const std::uint32_t modality = r.u32();
    if (modality != 1 && modality != 2) throw FormatError("checkpoint: unknown modality code " + std::to_string(modality));
    info.modality = static_cast<data::Modality>(modality);
    info.window = r.u32();
    try {
        cfg.validate();
    } catch (const ConfigError& e) {
        throw FormatError(std::string("checkpoint: invalid stream config: ") + e.what());
    }
    return {cfg, info};
}

std::vector<std::uint8_t> finish(ByteWriter& params, std::uint32_t count, ByteWriter& record) {
    ByteWriter out;
    out.text(std::string(kMagic, 4));
    out.u8(kVersion);
    out.u32(count);
    out.bytes(params.buffer());
    out.u32(static_cast<std::uint32_t>(record.buffer().size()));
    out.bytes(record.buffer());
    return std::move(out.buffer());
}

struct Parsed {
    std::vector<RawParam> params;
    std::vector<std::uint8_t> record;
};

Parsed parse(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes, "checkpoint");
    if (r.remaining() < 4 || r.text(4) != std::string(kMagic, 4)) throw BadMagicError("checkpoint: bad magic");
    const std::uint8_t version = r.u8();
    if (version != kVersion) throw VersionError("checkpoint: unsupported version " + std::to_string(version));
    const std::uint32_t count = r.u32();
    Parsed out;
    for (std::uint32_t i = 0; i < count; ++i) {
        RawParam p;
        p.name = r.text(r.u32());
        const std::uint32_t ndim = r.u32();
        r.need(static_cast<std::size_t>(ndim) * 4);
        std::size_t n = 1;
        for (std::uint32_t d = 0; d < ndim; ++d) {
            p.shape.push_back(r.u32());
            n *= p.shape.back();
        }
        r.need(n * 4);
        p.values.resize(n);
        for (auto& v : p.values) v = r.f32();
        out.params.push_back(std::move(p));
    }
    const auto record = r.bytes(r.u32());
    out.record.assign(record.begin(), record.end());
    if (r.remaining() != 0) throw FormatError("checkpoint: " + std::to_string(r.remaining()) + " trailing bytes");
    return out;
}

// Moves parsed values into `target`, which must list the same names and
// shapes in the same order starting at `offset`.
void assign(std::vector<RawParam>& raw, std::size_t offset, std::vector<Parameter<float>>& target,
            const std::string& prefix) {
    if (raw.size() < offset + target.size()) throw FormatError("checkpoint: too few parameters for the topology");
    for (std::size_t i = 0; i < target.size(); ++i) {
        RawParam& p = raw[offset + i];
        if (p.name != prefix + target[i].name || p.shape != target[i].value.shape()) {
            throw FormatError("checkpoint: parameter '" + p.name + "' " + shape_str(p.shape) + " does not match '" +
                              prefix + target[i].name + "' " + shape_str(target[i].value.shape()));
        }
        target[i].value = Tensor(p.shape, std::move(p.values));
    }
}

}  // namespace

std::vector<std::uint8_t> encode_stream(const nn::Network<float>& net, const StreamInfo& info) {
    ByteWriter params, record;
    for (const auto& p : net.parameters()) write_param(params, p.name, p.value);
    write_stream_record(record, net.config(), info);
    return finish(params, static_cast<std::uint32_t>(net.parameters().size()), record);
}

std::vector<std::uint8_t> encode_fusion(const fusion::FusionModel<float>& model, const StreamInfo& a,
                                        const StreamInfo& b) {
    ByteWriter params, record;
    std::uint32_t count = 0;
    for (const auto& p : model.stream_a().parameters()) write_param(params, "a." + p.name, p.value), ++count;
    for (const auto& p : model.stream_b().parameters()) write_param(params, "b." + p.name, p.value), ++count;
    std::uint32_t hidden = 0;
    if (model.has_correction()) {
        for (const auto& p : model.correction().parameters()) write_param(params, p.name, p.value), ++count;
        hidden = static_cast<std::uint32_t>(model.correction().hidden());
    }
    write_stream_record(record, model.stream_a().config(), a);
    write_stream_record(record, model.stream_b().config(), b);
    record.u32(hidden);
    record.u8(static_cast<std::uint8_t>(model.mode()));
    return finish(params, count, record);
}

Kind detect_kind(std::span<const std::uint8_t> bytes) {
    const Parsed p = parse(bytes);
    // Stream records are whole u32 words; the fusion mode byte breaks that.
    return p.record.size() % 4 == 1 ? Kind::fusion : Kind::stream;
}

StreamCheckpoint decode_stream(std::span<const std::uint8_t> bytes) {
    Parsed parsed = parse(bytes);
    ByteReader r(parsed.record, "checkpoint config record");
    auto [cfg, info] = read_stream_record(r);
    if (r.remaining() != 0) throw FormatError("checkpoint: not a single-stream checkpoint");
    nn::Network<float> net(cfg, 0, nn::Init::zero);
    if (parsed.params.size() != net.parameters().size()) {
        throw FormatError("checkpoint: " + std::to_string(parsed.params.size()) + " parameters, topology needs " +
                          std::to_string(net.parameters().size()));
    }
    assign(parsed.params, 0, net.parameters(), "");
    return {std::move(net), info};
}

FusionCheckpoint decode_fusion(std::span<const std::uint8_t> bytes) {
    Parsed parsed = parse(bytes);
    ByteReader r(parsed.record, "checkpoint config record");
    auto [cfg_a, info_a] = read_stream_record(r);
    auto [cfg_b, info_b] = read_stream_record(r);
    const std::uint32_t hidden = r.u32();
    const std::uint8_t mode_byte = r.u8();
    if (r.remaining() != 0) throw FormatError("checkpoint: trailing bytes in fusion config record");
    if (mode_byte != 1 && mode_byte != 2) throw FormatError("checkpoint: unknown fusion mode " + std::to_string(mode_byte));
    const auto mode = static_cast<fusion::FusionMode>(mode_byte);
    if (mode == fusion::FusionMode::correction && hidden == 0) throw FormatError("checkpoint: zero hidden width");

    nn::Network<float> a(cfg_a, 0, nn::Init::zero);
    nn::Network<float> b(cfg_b, 0, nn::Init::zero);
    const std::size_t na = a.parameters().size(), nb = b.parameters().size();
    assign(parsed.params, 0, a.parameters(), "a.");
    assign(parsed.params, na, b.parameters(), "b.");
    fusion::FusionModel<float> model(std::move(a), std::move(b), mode, hidden, 0);
    std::size_t expected = na + nb;
    if (model.has_correction()) {
        assign(parsed.params, expected, model.correction().parameters(), "");
        expected += model.correction().parameters().size();
    }
    if (parsed.params.size() != expected) {
        throw FormatError("checkpoint: " + std::to_string(parsed.params.size()) + " parameters, topology needs " +
                          std::to_string(expected));
    }
    return {std::move(model), info_a, info_b};
}

void save_stream(const nn::Network<float>& net, const StreamInfo& info, const std::filesystem::path& path) {
    detail::write_file(path, encode_stream(net, info));
}

StreamCheckpoint load_stream(const std::filesystem::path& path) { return decode_stream(detail::read_file(path)); }

void save_fusion(const fusion::FusionModel<float>& model, const StreamInfo& a, const StreamInfo& b,
                 const std::filesystem::path& path) {
    detail::write_file(path, encode_fusion(model, a, b));
}

FusionCheckpoint load_fusion(const std::filesystem::path& path) { return decode_fusion(detail::read_file(path)); }

Kind detect_kind(const std::filesystem::path& path) { return detect_kind(detail::read_file(path)); }

}  // namespace segfuse::ckpt
