#include "disam/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "disam/errors.hpp"

namespace disam {
namespace config {

namespace {

long to_int(const std::string& key, const std::string& v) {
  long out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw InvalidConfig("bad integer for '" + key + "': " + v);
  return out;
}

double to_real(const std::string& key, const std::string& v) {
  double out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw InvalidConfig("bad number for '" + key + "': " + v);
  return out;
}

}  // namespace

void apply_key(RunConfig& rc, const std::string& key, const std::string& value) {
  auto& n = rc.network;
  auto& w = rc.weights;
  auto& s = rc.schedule;
  if (key == "image_size") n.image_size = static_cast<int>(to_int(key, value));
  else if (key == "base_channels") n.base_channels = static_cast<int>(to_int(key, value));
  else if (key == "latent_channels") n.latent_channels = static_cast<int>(to_int(key, value));
  else if (key == "n_res_blocks_total") n.n_res_blocks_total = static_cast<int>(to_int(key, value));
  else if (key == "n_domains") n.n_domains = static_cast<int>(to_int(key, value));
  else if (key == "disc_layers") n.disc_layers = static_cast<int>(to_int(key, value));
  else if (key == "seed") {
    n.seed = static_cast<uint64_t>(to_int(key, value));
    s.seed = n.seed;
  } else if (key == "lambda_cyc") w.lambda_cyc = to_real(key, value);
  else if (key == "lambda_fcl") w.lambda_fcl = to_real(key, value);
  else if (key == "lambda_sam") w.lambda_sam = to_real(key, value);
  else if (key == "lambda_trip_fcl") w.lambda_trip_fcl = to_real(key, value);
  else if (key == "lambda_trip_sam") w.lambda_trip_sam = to_real(key, value);
  else if (key == "m_f") w.m_f = to_real(key, value);
  else if (key == "alpha_f") w.alpha_f = to_real(key, value);
  else if (key == "m_s") w.m_s = to_real(key, value);
  else if (key == "alpha_s") w.alpha_s = to_real(key, value);
  else if (key == "ramp_fraction") w.ramp_fraction = to_real(key, value);
  else if (key == "total_epochs") s.total_epochs = static_cast<int>(to_int(key, value));
  else if (key == "lr_initial") s.lr_initial = to_real(key, value);
  else if (key == "lr_decay") {
    if (value != "linear_to_zero") throw InvalidConfig("unknown lr_decay: " + value);
  } else if (key == "ramp_epochs") s.ramp_epochs = static_cast<int>(to_int(key, value));
  else if (key == "hard_negative_start_epoch")
    s.hard_negative_start_epoch = static_cast<int>(to_int(key, value));
  else if (key == "pool_size") s.pool_size = static_cast<int>(to_int(key, value));
  else if (key == "batch_size") s.batch_size = static_cast<int>(to_int(key, value));
  else if (key == "optimizer") {
    if (value != "adam") throw InvalidConfig("unknown optimizer: " + value);
  } else if (key == "adam_beta1") s.adam_beta1 = to_real(key, value);
  else if (key == "adam_beta2") s.adam_beta2 = to_real(key, value);
  else if (key == "checkpoint_every") s.checkpoint_every = static_cast<int>(to_int(key, value));
  else if (key == "steps_per_epoch") s.steps_per_epoch = static_cast<int>(to_int(key, value));
  else throw InvalidConfig("unknown config key: " + key);
}

RunConfig load_config_file(const std::string& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    // trim
    const auto b = line.find_first_not_of(" \t");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t");
    line = line.substr(b, e - b + 1);
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw InvalidConfig("config line " + std::to_string(line_no) + " is not key=value: " + line);
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
    while (!value.empty() && (value.front() == ' ' || value.front() == '\t')) value.erase(0, 1);
    apply_key(base, key, value);
  }
  return base;
}

std::string dump(const RunConfig& rc) {
  std::ostringstream os;
  char buf[64];
  auto real = [&buf](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  os << "image_size=" << rc.network.image_size << '\n'
     << "base_channels=" << rc.network.base_channels << '\n'
     << "latent_channels=" << rc.network.latent_channels << '\n'
     << "n_res_blocks_total=" << rc.network.n_res_blocks_total << '\n'
     << "n_domains=" << rc.network.n_domains << '\n'
     << "disc_layers=" << rc.network.disc_layers << '\n'
     << "seed=" << rc.network.seed << '\n'
     << "lambda_cyc=" << real(rc.weights.lambda_cyc) << '\n'
     << "lambda_fcl=" << real(rc.weights.lambda_fcl) << '\n'
     << "lambda_sam=" << real(rc.weights.lambda_sam) << '\n'
     << "lambda_trip_fcl=" << real(rc.weights.lambda_trip_fcl) << '\n'
     << "lambda_trip_sam=" << real(rc.weights.lambda_trip_sam) << '\n'
     << "m_f=" << real(rc.weights.m_f) << '\n'
     << "alpha_f=" << real(rc.weights.alpha_f) << '\n'
     << "m_s=" << real(rc.weights.m_s) << '\n'
     << "alpha_s=" << real(rc.weights.alpha_s) << '\n'
     << "ramp_fraction=" << real(rc.weights.ramp_fraction) << '\n'
     << "total_epochs=" << rc.schedule.total_epochs << '\n'
     << "lr_initial=" << real(rc.schedule.lr_initial) << '\n'
     << "lr_decay=linear_to_zero\n"
     << "ramp_epochs=" << rc.schedule.ramp_epochs << '\n'
     << "hard_negative_start_epoch=" << rc.schedule.hard_negative_start_epoch << '\n'
     << "pool_size=" << rc.schedule.pool_size << '\n'
     << "batch_size=" << rc.schedule.batch_size << '\n'
     << "optimizer=adam\n"
     << "adam_beta1=" << real(rc.schedule.adam_beta1) << '\n'
     << "adam_beta2=" << real(rc.schedule.adam_beta2) << '\n'
     << "checkpoint_every=" << rc.schedule.checkpoint_every << '\n'
     << "steps_per_epoch=" << rc.schedule.steps_per_epoch << '\n';
  return os.str();
}

}  // namespace config
}  // namespace disam
