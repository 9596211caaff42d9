#include "arq/model_io.hpp"

#include <fstream>

namespace arq::io {

void write_network(BinaryWriter& w, const nn::Network& net) {
  w.bytes("ARQNET");
  w.u32(kModelFormatVersion);
  w.u32(static_cast<std::uint32_t>(net.num_classes));
  w.u32(static_cast<std::uint32_t>(net.input_shape.size()));
  for (auto d : net.input_shape) w.u32(static_cast<std::uint32_t>(d));
  w.u32(static_cast<std::uint32_t>(net.layers.size()));
  for (const auto& l : net.layers) {
    w.u8(static_cast<std::uint8_t>(l.kind));
    w.u32(static_cast<std::uint32_t>(l.c_in));
    w.u32(static_cast<std::uint32_t>(l.c_out));
    w.u32(static_cast<std::uint32_t>(l.kernel_size));
    w.u32(static_cast<std::uint32_t>(l.stride));
    w.u32(static_cast<std::uint32_t>(l.padding));
    w.u32(static_cast<std::uint32_t>(l.feature_size));
    w.u8(l.depthwise ? 1 : 0);
  }
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    w.f64_array(net.weights[k].values);
    w.f64_array(net.biases[k].values);
  }
}

nn::Network read_network(BinaryReader& r) {
  r.expect_magic("ARQNET", "ARQNET");
  r.expect_version(kModelFormatVersion, "ARQNET");
  nn::Network net;
  net.num_classes = r.u32("num_classes");
  const std::uint32_t rank = r.u32("input rank");
  if (rank != 1 && rank != 3) throw FormatError(r.source() + ": input rank must be 1 or 3");
  for (std::uint32_t i = 0; i < rank; ++i) net.input_shape.push_back(r.u32("input dims"));
  const std::uint32_t n_layers = r.u32("layer count");
  if (n_layers == 0 || n_layers > 4096) throw FormatError(r.source() + ": implausible layer count");
  for (std::uint32_t k = 0; k < n_layers; ++k) {
    nn::LayerSpec l;
    l.index = k;
    const std::uint8_t kind = r.u8("layer kind");
    if (kind > static_cast<std::uint8_t>(nn::LayerKind::flatten)) {
      throw FormatError(r.source() + ": unknown layer kind " + std::to_string(kind));
    }
    l.kind = static_cast<nn::LayerKind>(kind);
    l.c_in = r.u32("c_in");
    l.c_out = r.u32("c_out");
    l.kernel_size = r.u32("kernel_size");
    l.stride = r.u32("stride");
    l.padding = r.u32("padding");
    l.feature_size = r.u32("feature_size");
    l.depthwise = r.u8("depthwise") != 0;
    l.n_params = l.weight_count() + l.bias_count();
    net.layers.push_back(l);
  }
  for (const auto& l : net.layers) {
    auto w = r.f64_array("weights");
    auto b = r.f64_array("biases");
    if (w.size() != l.weight_count() || b.size() != l.bias_count()) {
      throw FormatError(r.source() + ": parameter count mismatch at layer " + std::to_string(l.index));
    }
    if (l.kind == nn::LayerKind::dense) {
      net.weights.emplace_back(std::vector<std::size_t>{l.c_out, l.c_in}, std::move(w));
    } else if (l.kind == nn::LayerKind::conv2d) {
      net.weights.emplace_back(
          std::vector<std::size_t>{l.c_out, l.depthwise ? 1 : l.c_in, l.kernel_size, l.kernel_size}, std::move(w));
    } else {
      net.weights.emplace_back();
    }
    net.biases.emplace_back(b.empty() ? Tensor{} : Tensor({l.c_out}, std::move(b)));
  }
  try {
    net.validate();
  } catch (const ShapeError& e) {
    throw FormatError(r.source() + ": inconsistent network: " + e.what());
  }
  return net;
}

void save_model(const nn::Network& net, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  BinaryWriter w(os);
  write_network(w, net);
  if (!os) throw Error("write failed: " + path.string());
}

nn::Network load_model(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  BinaryReader r(is, path.string());
  nn::Network net = read_network(r);
  r.expect_end();
  return net;
}

}  // namespace arq::io
