#include "amcl/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "amcl/errors.hpp"

namespace amcl {
namespace {

constexpr char kMagic[4] = {'A', 'M', 'C', '1'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  const std::vector<unsigned char>& buffer() const noexcept { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

class Reader {
 public:
  explicit Reader(std::vector<unsigned char> data) : data_(std::move(data)) {}
  std::size_t offset() const noexcept { return pos_; }
  bool done() const noexcept { return pos_ == data_.size(); }
  void need(std::size_t n, const char* what) const {
    if (data_.size() - pos_ < n) throw FormatError(std::string("checkpoint truncated while reading ") + what, pos_);
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return data_[pos_++];
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{data_[pos_++]} << (8 * i);
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{data_[pos_++]} << (8 * i);
    return v;
  }
  std::int64_t i64(const char* what) { return static_cast<std::int64_t>(u64(what)); }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
  std::string str(const char* what) {
    const std::uint32_t n = u32(what);
    need(n, what);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  /// Bounded count: each element needs at least `min_bytes` more bytes.
  std::size_t count(const char* what, std::size_t min_bytes) {
    const std::size_t at = pos_;
    const std::uint32_t n = u32(what);
    if (min_bytes && n > (data_.size() - pos_) / min_bytes)
      throw FormatError(std::string("implausible ") + what + " count " + std::to_string(n), at);
    return n;
  }
  void magic() {
    need(4, "magic");
    if (std::memcmp(data_.data(), kMagic, 4) != 0) throw FormatError("not an AMC1 checkpoint (bad magic)", 0);
    pos_ += 4;
  }

 private:
  std::vector<unsigned char> data_;
  std::size_t pos_ = 0;
};

void write_tensors(Writer& w, const std::vector<NamedTensor>& params) {
  for (const auto& p : params) {
    w.str(p.name);
    w.u32(static_cast<std::uint32_t>(p.tensor.rank()));
    for (std::size_t d : p.tensor.shape()) w.u64(d);
    for (double v : p.tensor.data()) w.f64(v);
  }
}

void read_tensors(Reader& r, std::vector<NamedTensor>& params, const std::string& owner) {
  for (auto& p : params) {
    const std::size_t at = r.offset();
    const std::string name = r.str("tensor name");
    if (name != p.name)
      throw FormatError("expected tensor '" + p.name + "' of " + owner + ", found '" + name + "'", at);
    const std::size_t rank = r.count("tensor rank", 8);
    Shape shape(rank);
    for (auto& d : shape) d = r.u64("tensor extent");
    if (shape != p.tensor.shape())
      throw FormatError("tensor '" + name + "' has shape " + shape_string(shape) + ", architecture expects " +
                        shape_string(p.tensor.shape()),
                        at);
    r.need(8 * p.tensor.size(), "tensor payload");
    for (double& v : p.tensor.data()) v = r.f64("tensor payload");
  }
}

std::vector<unsigned char> read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

void save_checkpoint(const EnsembleState& state, const std::string& path) {
  const EnsembleConfig& c = state.config;
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.u8(static_cast<std::uint8_t>(c.method));
  w.u8(static_cast<std::uint8_t>(c.fusion));
  w.u32(static_cast<std::uint32_t>(c.members));
  w.u32(static_cast<std::uint32_t>(c.penalty.overlap));
  w.u32(static_cast<std::uint32_t>(c.num_classes()));
  w.u32(static_cast<std::uint32_t>(c.penalty.threshold_epochs));
  w.u8(state.specialization.frozen ? 1 : 0);
  w.f64(c.penalty.beta);
  w.f64(c.penalty.gamma);
  w.f64(c.share_probability);
  w.u64(c.seed);
  w.u32(static_cast<std::uint32_t>(state.epochs_completed));

  w.u8(static_cast<std::uint8_t>(c.arch.kind));
  w.u8(c.arch.auxiliary_head ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(c.arch.input_shape.size()));
  for (std::size_t d : c.arch.input_shape) w.u64(d);
  w.u32(static_cast<std::uint32_t>(c.arch.widths.size()));
  for (std::size_t d : c.arch.widths) w.u64(d);

  std::size_t tensors = 0;
  for (const auto& m : state.members) tensors += m.parameters().size();
  if (state.fusion) tensors += state.fusion->parameters().size();
  w.u32(static_cast<std::uint32_t>(tensors));
  for (const auto& m : state.members) write_tensors(w, m.parameters());
  if (state.fusion) write_tensors(w, state.fusion->parameters());

  const auto& flags = state.specialization.flags;
  w.u32(static_cast<std::uint32_t>(flags.rows()));
  w.u32(static_cast<std::uint32_t>(flags.cols()));
  for (int v : flags.data()) w.u8(static_cast<std::uint8_t>(v));

  const auto& counts = state.counter.counts();
  w.u32(static_cast<std::uint32_t>(counts.rows()));
  w.u32(static_cast<std::uint32_t>(counts.cols()));
  for (std::int64_t v : counts.data()) w.i64(v);
  w.u32(static_cast<std::uint32_t>(state.counter.epochs_accumulated()));
  w.u8(state.counter.frozen() ? 1 : 0);

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write checkpoint '" + tmp + "'");
    out.write(reinterpret_cast<const char*>(w.buffer().data()), static_cast<std::streamsize>(w.buffer().size()));
    out.flush();
    if (!out) throw InputError("failed writing checkpoint '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw InputError("cannot move checkpoint into place at '" + path + "': " + ec.message());
  }
}

EnsembleState load_checkpoint(const std::string& path) {
  Reader r(read_all(path));
  r.magic();
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion)
    throw CompatibilityError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                             std::to_string(kCheckpointVersion) + ")");

  EnsembleConfig c;
  std::size_t at = r.offset();
  const std::uint8_t method = r.u8("method");
  if (method > static_cast<std::uint8_t>(Method::amcl)) throw FormatError("unknown method tag", at);
  c.method = static_cast<Method>(method);
  at = r.offset();
  const std::uint8_t fusion = r.u8("fusion");
  if (fusion > static_cast<std::uint8_t>(FusionKind::share)) throw FormatError("unknown fusion tag", at);
  c.fusion = static_cast<FusionKind>(fusion);
  c.members = r.u32("members");
  c.penalty.overlap = r.u32("overlap");
  const std::size_t classes = r.u32("class count");
  c.penalty.threshold_epochs = r.u32("threshold");
  const bool frozen = r.u8("frozen flag") != 0;
  c.penalty.beta = r.f64("beta");
  c.penalty.gamma = r.f64("gamma");
  c.share_probability = r.f64("share probability");
  c.seed = r.u64("seed");
  const std::size_t epochs_completed = r.u32("epochs completed");

  at = r.offset();
  const std::uint8_t arch = r.u8("architecture");
  if (arch > static_cast<std::uint8_t>(ArchKind::mlp)) throw FormatError("unknown architecture tag", at);
  c.arch.kind = static_cast<ArchKind>(arch);
  c.arch.auxiliary_head = r.u8("aux flag") != 0;
  c.arch.num_classes = classes;
  c.arch.input_shape.resize(r.count("input rank", 8));
  for (auto& d : c.arch.input_shape) d = r.u64("input extent");
  c.arch.widths.resize(r.count("width", 8));
  for (auto& d : c.arch.widths) d = r.u64("width");

  at = r.offset();
  EnsembleState state;
  try {
    state = EnsembleState::create(c);
  } catch (const Error& e) {
    throw FormatError(std::string("checkpoint header is inconsistent: ") + e.what(), at);
  }

  at = r.offset();
  std::size_t expected = 0;
  for (const auto& m : state.members) expected += m.parameters().size();
  if (state.fusion) expected += state.fusion->parameters().size();
  const std::size_t tensors = r.u32("tensor count");
  if (tensors != expected)
    throw FormatError("checkpoint has " + std::to_string(tensors) + " tensors, architecture needs " +
                      std::to_string(expected),
                      at);
  for (auto& m : state.members) read_tensors(r, m.parameters(), "member " + std::to_string(m.index()));
  if (state.fusion) read_tensors(r, state.fusion->parameters(), "fusion module");

  at = r.offset();
  const std::size_t w_rows = r.u32("specialization rows"), w_cols = r.u32("specialization cols");
  if ((w_rows || w_cols) && (w_rows != classes || w_cols != c.members))
    throw FormatError("specialization matrix has the wrong extents", at);
  r.need(w_rows * w_cols, "specialization matrix");
  Matrix<int> flags(w_rows, w_cols);
  for (int& v : flags.data()) {
    at = r.offset();
    const std::uint8_t b = r.u8("specialization flag");
    if (b > 1) throw FormatError("specialization flag is not 0/1", at);
    v = b;
  }
  state.specialization.flags = std::move(flags);
  state.specialization.frozen = frozen;
  if (frozen && (w_rows == 0 || w_cols == 0)) throw FormatError("frozen flag set without a specialization matrix", at);

  at = r.offset();
  const std::size_t c_rows = r.u32("counter rows"), c_cols = r.u32("counter cols");
  if (c_rows != classes || c_cols != c.members) throw FormatError("assignment counter has the wrong extents", at);
  r.need(8 * c_rows * c_cols, "assignment counts");
  Matrix<std::int64_t> counts(c_rows, c_cols);
  for (auto& v : counts.data()) v = r.i64("assignment count");
  const std::size_t counter_epochs = r.u32("counter epochs");
  const bool counter_frozen = r.u8("counter frozen flag") != 0;
  state.counter = AssignmentCounter::restore(std::move(counts), counter_epochs, counter_frozen);
  state.epochs_completed = epochs_completed;
  if (!r.done()) throw FormatError("trailing bytes after checkpoint payload", r.offset());
  return state;
}

}  // namespace amcl
