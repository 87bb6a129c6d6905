#include "disam/network.hpp"

#include <cstdio>

#include "disam/crc32.hpp"

namespace disam {
namespace net {

void NetworkConfig::validate() const {
  if (image_size < 8 || image_size % 4 != 0)
    throw InvalidConfig("image_size must be a multiple of 4 and >= 8");
  if (base_channels < 1) throw InvalidConfig("base_channels must be positive");
  if (latent_channels < 2 || latent_channels % 2 != 0)
    throw InvalidConfig("latent_channels must be a positive even number");
  if (n_res_blocks_total < 0 || n_res_blocks_total % 2 != 0)
    throw InvalidConfig("n_res_blocks_total must be even and nonnegative");
  if (n_domains < 2) throw InvalidConfig("n_domains must be at least 2");
  if (disc_layers < 1 || (image_size >> disc_layers) < 1)
    throw InvalidConfig("disc_layers too deep for image_size");
}

std::vector<NamedParam<float>> ModelBundle::named_params() {
  std::vector<NamedParam<float>> out;
  for (int d = 0; d < config.n_domains; ++d) {
    encoders[static_cast<size_t>(d)].collect_params("enc" + std::to_string(d), out);
    decoders[static_cast<size_t>(d)].collect_params("dec" + std::to_string(d), out);
    discriminators[static_cast<size_t>(d)].collect_params("disc" + std::to_string(d), out);
  }
  return out;
}

std::vector<NamedParam<float>> ModelBundle::generator_params() {
  std::vector<NamedParam<float>> out;
  for (int d = 0; d < config.n_domains; ++d) {
    encoders[static_cast<size_t>(d)].collect_params("enc" + std::to_string(d), out);
    decoders[static_cast<size_t>(d)].collect_params("dec" + std::to_string(d), out);
  }
  return out;
}

std::vector<NamedParam<float>> ModelBundle::discriminator_params() {
  std::vector<NamedParam<float>> out;
  for (int d = 0; d < config.n_domains; ++d)
    discriminators[static_cast<size_t>(d)].collect_params("disc" + std::to_string(d), out);
  return out;
}

void ModelBundle::refresh_fingerprint() {
  // CRC over the parameter payload in table order; identical for a bundle
  // and its checkpoint round-trip.
  Crc32 crc;
  for (auto& np : named_params()) {
    crc.update(np.name.data(), np.name.size());
    crc.update(np.param->value.data(),
               sizeof(float) * static_cast<size_t>(np.param->value.numel()));
  }
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%08x", crc.value());
  fingerprint = buf;
}

ModelBundle init_bundle(const NetworkConfig& cfg) {
  cfg.validate();
  ModelBundle b;
  b.config = cfg;
  Rng rng(cfg.seed);
  for (int d = 0; d < cfg.n_domains; ++d) {
    b.encoders.push_back(make_encoder<float>(cfg));
    b.decoders.push_back(make_decoder<float>(cfg));
    b.discriminators.push_back(make_discriminator<float>(cfg));
    auto enc_params = b.encoders.back().params("enc" + std::to_string(d));
    init_params(enc_params, rng);
    auto dec_params = b.decoders.back().params("dec" + std::to_string(d));
    init_params(dec_params, rng);
    auto disc_params = b.discriminators.back().params("disc" + std::to_string(d));
    init_params(disc_params, rng);
  }
  b.refresh_fingerprint();
  return b;
}

namespace {

void check_domain(const ModelBundle& bundle, DomainId domain) {
  if (domain.index < 0 || domain.index >= bundle.config.n_domains)
    throw InvalidConfig("domain index " + std::to_string(domain.index) + " out of range");
}

}  // namespace

FeatureMap encode_pixels(const ModelBundle& bundle, DomainId domain, const TensorF& pixels) {
  check_domain(bundle, domain);
  if (pixels.ndim() != 3 || pixels.dim(0) != 3 || pixels.dim(1) != bundle.config.image_size ||
      pixels.dim(2) != bundle.config.image_size)
    throw ShapeMismatch("encode expects (3," + std::to_string(bundle.config.image_size) + "," +
                        std::to_string(bundle.config.image_size) + "), got " + pixels.shape_str());
  return bundle.encoders[static_cast<size_t>(domain.index)].forward(pixels, nullptr);
}

FeatureMap encode(const ModelBundle& bundle, DomainId domain, const ImageSample& img) {
  return encode_pixels(bundle, domain, img.pixels);
}

TensorF decode(const ModelBundle& bundle, DomainId domain, const FeatureMap& z) {
  check_domain(bundle, domain);
  const int hw = bundle.config.latent_hw();
  if (z.ndim() != 3 || z.dim(0) != bundle.config.latent_channels || z.dim(1) != hw ||
      z.dim(2) != hw)
    throw ShapeMismatch("decode expects (" + std::to_string(bundle.config.latent_channels) + "," +
                        std::to_string(hw) + "," + std::to_string(hw) + "), got " + z.shape_str());
  return bundle.decoders[static_cast<size_t>(domain.index)].forward(z, nullptr);
}

TensorF discriminate(const ModelBundle& bundle, DomainId domain, const TensorF& raster) {
  check_domain(bundle, domain);
  if (raster.ndim() != 3 || raster.dim(0) != 3 || raster.dim(1) != bundle.config.image_size ||
      raster.dim(2) != bundle.config.image_size)
    throw ShapeMismatch("discriminate expects (3," + std::to_string(bundle.config.image_size) +
                        "," + std::to_string(bundle.config.image_size) + "), got " +
                        raster.shape_str());
  return bundle.discriminators[static_cast<size_t>(domain.index)].forward(raster, nullptr);
}

}  // namespace net
}  // namespace disam
