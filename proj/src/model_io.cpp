#include "ambiflow/model_io.hpp"

#include <string>

#include "ambiflow/error.hpp"

namespace ambiflow::model_io {

void encode_tensor(binio::Writer& w, const nd::Tensor& t) {
  w.u32(static_cast<std::uint32_t>(t.rows()));
  w.u32(static_cast<std::uint32_t>(t.cols()));
  for (double v : t.values()) w.f64(v);
}

nd::Tensor decode_tensor(binio::Reader& r) {
  const std::size_t rows = r.u32(), cols = r.u32();
  if (rows * cols * 8 > r.remaining()) throw TruncatedError("tensor record runs past the end of the file");
  nd::Tensor t = nd::Tensor::zeros(rows, cols);
  for (auto& v : t.storage()) v = r.f64();
  return t;
}

void encode_model(binio::Writer& w, const flow::FlowModel& flow, const posedisc::Discriminator* disc) {
  const auto& c = flow.config();
  w.raw("AFMD");
  w.u32(kModelVersion);
  w.u32(static_cast<std::uint32_t>(c.joints));
  w.u32(static_cast<std::uint32_t>(c.blocks));
  w.f64(c.clamp_alpha);
  w.u64(c.seed);
  w.u32(static_cast<std::uint32_t>(c.subnet_hidden));
  w.u32(static_cast<std::uint32_t>(c.condition_dim));
  w.u32(static_cast<std::uint32_t>(c.encoder_hidden));
  w.u32(static_cast<std::uint32_t>(c.encoder_out));
  w.u8(c.zero_init_last ? 1 : 0);
  w.u8(disc ? 1 : 0);
  if (disc) {
    w.u32(static_cast<std::uint32_t>(disc->config().hidden));
    w.f64(disc->config().leaky_slope);
    w.u64(disc->config().seed);
  }
  for (const auto& p : flow.permutations())
    for (auto i : p) w.u32(static_cast<std::uint32_t>(i));
  for (const auto& p : flow.params()) encode_tensor(w, p.value());
  if (disc)
    for (const auto& p : disc->params()) encode_tensor(w, p.value());
}

namespace {
void load_params(binio::Reader& r, const std::vector<nd::Var>& params, const char* what) {
  for (auto p : params) {
    nd::Tensor t = decode_tensor(r);
    if (!t.same_shape(p.value())) {
      throw FormatError(std::string(what) + ": weight tensor shape " + std::to_string(t.rows()) + "x" +
                        std::to_string(t.cols()) + " does not match the architecture");
    }
    p.mutable_value() = std::move(t);
  }
}
}  // namespace

Model decode_model(binio::Reader& r, const Skeleton& skeleton) {
  if (r.raw(4) != "AFMD") throw FormatError("model: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kModelVersion) throw VersionError("model: unsupported format version " + std::to_string(version));
  flow::FlowConfig c;
  c.joints = r.u32();
  c.blocks = r.u32();
  c.clamp_alpha = r.f64();
  c.seed = r.u64();
  c.subnet_hidden = r.u32();
  c.condition_dim = r.u32();
  c.encoder_hidden = r.u32();
  c.encoder_out = r.u32();
  c.zero_init_last = r.u8() != 0;
  const bool has_disc = r.u8() != 0;
  posedisc::DiscriminatorConfig dc;
  if (has_disc) {
    dc.hidden = r.u32();
    dc.leaky_slope = r.f64();
    dc.seed = r.u64();
  }
  if (c.joints != skeleton.joints()) throw FormatError("model: joint count does not match the skeleton");
  Model m{flow::FlowModel(c), std::nullopt};
  std::vector<std::vector<std::size_t>> perms(c.blocks, std::vector<std::size_t>(c.x_dim()));
  for (auto& p : perms)
    for (auto& i : p) i = r.u32();
  m.flow.set_permutations(std::move(perms));
  load_params(r, m.flow.params(), "model");
  if (has_disc) {
    m.disc.emplace(skeleton, dc);
    load_params(r, m.disc->params(), "discriminator");
  }
  return m;
}

std::span<const std::uint8_t> verified_payload(std::span<const std::uint8_t> bytes, const char* what) {
  if (bytes.size() < 4) throw TruncatedError(std::string(what) + ": file is truncated");
  const auto payload = bytes.first(bytes.size() - 4);
  binio::Reader tail(bytes.last(4));
  if (binio::crc32(payload) != tail.u32()) throw ChecksumError(std::string(what) + ": checksum mismatch");
  return payload;
}

void write_model(const std::filesystem::path& path, const flow::FlowModel& flow, const posedisc::Discriminator* disc) {
  binio::Writer w;
  encode_model(w, flow, disc);
  w.u32(binio::crc32(w.bytes()));
  binio::write_file(path, w.bytes());
}

Model read_model(const std::filesystem::path& path, const Skeleton& skeleton) {
  const auto bytes = binio::read_file(path);
  binio::Reader r(verified_payload(bytes, "model"));
  Model m = decode_model(r, skeleton);
  if (r.remaining() != 0) throw FormatError("model: trailing bytes");
  return m;
}

}  // namespace ambiflow::model_io
