#include "xhved/model.hpp"

#include <sstream>

#include "xhved/errors.hpp"

namespace xhved {

void ModelConfig::validate() const {
  for (std::size_t c : channels) require(c >= 2 && c % 2 == 0, "model: channel widths must be even");
  for (std::size_t e : extent)
    require(e >= 8 && e % 8 == 0, "model: extent must be a positive multiple of 8");
}

std::string ModelConfig::serialize() const {
  std::ostringstream os;
  os << "channels=" << channels[0] << ',' << channels[1] << ',' << channels[2] << ',' << channels[3]
     << '\n'
     << "extent=" << extent[0] << ',' << extent[1] << ',' << extent[2] << '\n'
     << "save_attention=" << save_attention << '\n'
     << "vila=" << vila << '\n'
     << "sfeca=" << sfeca << '\n'
     << "include_prior=" << include_prior << '\n'
     << "vila_blocks=" << vila_blocks << '\n'
     << "seed=" << seed << '\n';
  return os.str();
}

ModelConfig ModelConfig::parse(const std::string& text) {
  ModelConfig c;
  std::istringstream is(text);
  std::string line;
  auto list = [](const std::string& key, const std::string& v, auto& out) {
    std::istringstream ls(v);
    std::string item;
    std::size_t i = 0;
    while (std::getline(ls, item, ',')) {
      if (i >= out.size()) throw ParseError(key, "too many values");
      out[i++] = std::stoull(item);
    }
    if (i != out.size()) throw ParseError(key, "too few values");
  };
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("model_config", "malformed line '" + line + "'");
    const std::string key = line.substr(0, eq), v = line.substr(eq + 1);
    try {
      if (key == "channels") list(key, v, c.channels);
      else if (key == "extent") list(key, v, c.extent);
      else if (key == "save_attention") c.save_attention = v == "1";
      else if (key == "vila") c.vila = v == "1";
      else if (key == "sfeca") c.sfeca = v == "1";
      else if (key == "include_prior") c.include_prior = v == "1";
      else if (key == "vila_blocks") c.vila_blocks = std::stoull(v);
      else if (key == "seed") c.seed = std::stoull(v);
      else throw ParseError(key, "unknown model setting");
    } catch (const std::invalid_argument&) {
      throw ParseError(key, "not a number");
    } catch (const std::out_of_range&) {
      throw ParseError(key, "out of range");
    }
  }
  return c;
}

template <typename T>
XhvedModel<T>::XhvedModel(const ModelConfig& config) : config_(config) {
  config.validate();
  Rng rng(derive_seed(config.seed, "init"));
  encoder = SaveEncoder<T>(config.channels, config.save_attention, config.include_prior, rng);
  attention = vila::Vila<T>(config.channels[3] / 2, config.bottleneck_extent(), config.vila_blocks, rng);
  decoder = DualDecoder<T>(config.channels, config.sfeca, rng);
}

template <typename T>
ModelOutput<T> XhvedModel<T>::forward(const Tensor<T>& images, ModalitySubset subset,
                                      LatentMode mode, Rng* noise) const {
  require(images.rank() == 5 && images.dim(2) == config_.extent[0] &&
              images.dim(3) == config_.extent[1] && images.dim(4) == config_.extent[2],
          "model: input " + shape_str(images.shape()) + " does not match the configured extent");
  auto enc = encoder(images, subset, mode, noise);
  Tensor<T> bottleneck = config_.vila ? attention(enc.bottleneck) : enc.bottleneck;
  auto dec = decoder(bottleneck, enc.skips);
  return {dec.seg, dec.recon, enc.fused};
}

template <typename T>
ParamList<T> XhvedModel<T>::parameters() const {
  ParamList<T> out;
  encoder.collect("encoder", out);
  if (config_.vila) attention.collect("vila", out);
  decoder.collect("decoder", out);
  return out;
}

bool frozen_in_pretrain(const std::string& name) {
  for (const char* prefix : {"decoder.seg.stage2.", "decoder.seg.stage3.", "decoder.seg.head.",
                             "decoder.dusfe16.", "decoder.dusfe8."})
    if (name.rfind(prefix, 0) == 0) return true;
  return false;
}

template class XhvedModel<float>;
template class XhvedModel<double>;

}  // namespace xhved
