#include "alert/vib.hpp"

#include "alert/binary_io.hpp"

#include <sstream>

namespace alert::vib {
namespace {

constexpr char kMagic[] = "ALVB";
constexpr std::uint32_t kVersion = 1;

}  // namespace

void HyperParams::validate(bool search_mode) const {
  if (hidden_dim < 1 || latent_dim < 1) throw Error("hidden_dim and latent_dim must be >= 1");
  if (mc_samples < 1) throw Error("mc_samples must be >= 1");
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw Error("beta must be finite and >= 0");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw Error("lr must be > 0");
  if (epochs < 1 || batch_size < 1) throw Error("epochs and batch_size must be >= 1");
  if (!search_mode) return;
  if (hidden_dim < 768 || hidden_dim > 2048) throw Error("hidden_dim outside [768, 2048]");
  if (latent_dim < 256 || latent_dim > 1024) throw Error("latent_dim outside [256, 1024]");
  if (beta < 1e-4 || beta > 1e-2) throw Error("beta outside [1e-4, 1e-2]");
  if (mc_samples > 30) throw Error("mc_samples outside [1, 30]");
}

std::string TrainHistory::to_csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "epoch,loss,ce,kl,acc\n";
  for (std::size_t i = 0; i < epochs.size(); ++i) {
    const auto& e = epochs[i];
    os << i << ',' << e.loss << ',' << e.ce << ',' << e.kl << ',' << e.accuracy << '\n';
  }
  return os.str();
}

template <typename Scalar>
std::vector<std::uint8_t> serialize(const Model<Scalar>& m) {
  io::ByteWriter w;
  w.put_bytes(std::string_view(kMagic, 4));
  w.put<std::uint32_t>(kVersion);
  w.put<std::uint32_t>(sizeof(Scalar));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.hp.hidden_dim));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.hp.latent_dim));
  w.put<double>(m.hp.beta);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.hp.mc_samples));
  w.put<double>(m.hp.lr);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.hp.epochs));
  w.put<std::uint64_t>(m.hp.seed);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.hp.batch_size));
  for (const auto& p : m.p) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(p.rows()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(p.cols()));
    w.put_span(std::span<const Scalar>(p.data(), static_cast<std::size_t>(p.size())));
  }
  return w.take();
}

template <typename Scalar>
Model<Scalar> deserialize(const std::vector<std::uint8_t>& bytes) {
  io::ByteReader rd(bytes);
  if (bytes.size() < 4 || rd.get_string(4) != std::string_view(kMagic, 4)) throw Error("bad magic");
  if (rd.get<std::uint32_t>() != kVersion) throw Error("unsupported version");
  if (rd.get<std::uint32_t>() != sizeof(Scalar)) throw Error("model scalar width mismatch");
  Model<Scalar> m;
  m.hp.hidden_dim = static_cast<int>(rd.get<std::uint32_t>());
  m.hp.latent_dim = static_cast<int>(rd.get<std::uint32_t>());
  m.hp.beta = rd.get<double>();
  m.hp.mc_samples = static_cast<int>(rd.get<std::uint32_t>());
  m.hp.lr = rd.get<double>();
  m.hp.epochs = static_cast<int>(rd.get<std::uint32_t>());
  m.hp.seed = rd.get<std::uint64_t>();
  m.hp.batch_size = static_cast<int>(rd.get<std::uint32_t>());
  m.hp.validate(false);
  for (auto& p : m.p) {
    const auto rows = rd.get<std::uint32_t>();
    const auto cols = rd.get<std::uint32_t>();
    if (static_cast<std::uint64_t>(rows) * cols * sizeof(Scalar) > rd.remaining()) {
      throw Error("truncated payload");
    }
    p.resize(rows, cols);
    rd.get_span(std::span<Scalar>(p.data(), static_cast<std::size_t>(p.size())));
  }
  if (rd.remaining() != 0) throw Error("trailing bytes after model");
  const Eigen::Index h = m.hp.hidden_dim;
  const Eigen::Index l = m.hp.latent_dim;
  const bool shapes_ok =
      m.p[kW1].rows() == h && m.p[kB1].rows() == h && m.p[kW2].rows() == h && m.p[kW2].cols() == h &&
      m.p[kB2].rows() == h && m.p[kWMu].rows() == l && m.p[kWMu].cols() == h &&
      m.p[kWLogvar].rows() == l && m.p[kWLogvar].cols() == h && m.p[kBMu].rows() == l &&
      m.p[kBLogvar].rows() == l && m.p[kWCls].rows() == 2 && m.p[kWCls].cols() == l &&
      m.p[kBCls].rows() == 2 && m.p[kW1].cols() > 0;
  if (!shapes_ok) throw Error("model parameter shapes are inconsistent");
  if (!m.all_finite()) throw Error("non-finite value");
  return m;
}

template <typename Scalar>
void save_model(const Model<Scalar>& m, const std::filesystem::path& path) {
  io::write_file(path, serialize(m));
}

template <typename Scalar>
Model<Scalar> load_model(const std::filesystem::path& path) {
  return deserialize<Scalar>(io::read_file(path));
}

template std::vector<std::uint8_t> serialize(const Model<float>&);
template std::vector<std::uint8_t> serialize(const Model<double>&);
template Model<float> deserialize(const std::vector<std::uint8_t>&);
template Model<double> deserialize(const std::vector<std::uint8_t>&);
template void save_model(const Model<float>&, const std::filesystem::path&);
template void save_model(const Model<double>&, const std::filesystem::path&);
template Model<float> load_model(const std::filesystem::path&);
template Model<double> load_model(const std::filesystem::path&);

}  // namespace alert::vib
