#include "reldist/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "reldist/error.hpp"

namespace reldist {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw Error(ErrorCode::Config, "bad number for " + key + ": '" + v + "'");
  }
}

long long parse_int(const std::string& v, const std::string& key) {
  long long out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw Error(ErrorCode::Config, "bad integer for " + key + ": '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error(ErrorCode::Config, "bad boolean for " + key + ": '" + v + "'");
}

using Setter = std::function<void(TrainConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"train.epochs", [](TrainConfig& c, const std::string& v, const std::string& k) { c.epochs = static_cast<int>(parse_int(v, k)); }},
      {"train.learning_rate", [](TrainConfig& c, const std::string& v, const std::string& k) { c.learning_rate = parse_double(v, k); }},
      {"train.final_lr_scale", [](TrainConfig& c, const std::string& v, const std::string& k) { c.final_lr_scale = parse_double(v, k); }},
      {"train.beta1", [](TrainConfig& c, const std::string& v, const std::string& k) { c.beta1 = parse_double(v, k); }},
      {"train.beta2", [](TrainConfig& c, const std::string& v, const std::string& k) { c.beta2 = parse_double(v, k); }},
      {"train.adam_eps", [](TrainConfig& c, const std::string& v, const std::string& k) { c.adam_eps = parse_double(v, k); }},
      {"train.sample_k", [](TrainConfig& c, const std::string& v, const std::string& k) { c.sample_k = static_cast<int>(parse_int(v, k)); }},
      {"train.monitor_sample_k", [](TrainConfig& c, const std::string& v, const std::string& k) { c.monitor_sample_k = static_cast<int>(parse_int(v, k)); }},
      {"train.lambda_disp", [](TrainConfig& c, const std::string& v, const std::string& k) { c.lambda_disp = parse_double(v, k); }},
      {"train.lambda_corr", [](TrainConfig& c, const std::string& v, const std::string& k) { c.lambda_corr = parse_double(v, k); }},
      {"train.lambda_cons", [](TrainConfig& c, const std::string& v, const std::string& k) { c.lambda_cons = parse_double(v, k); }},
      {"train.jitter", [](TrainConfig& c, const std::string& v, const std::string& k) { c.jitter = parse_double(v, k); }},
      {"train.seed", [](TrainConfig& c, const std::string& v, const std::string& k) { c.seed = static_cast<std::uint64_t>(parse_int(v, k)); }},
      {"encoder.k_neighbors", [](TrainConfig& c, const std::string& v, const std::string& k) { c.encoder.k_neighbors = static_cast<int>(parse_int(v, k)); }},
      {"encoder.d", [](TrainConfig& c, const std::string& v, const std::string& k) { c.encoder.d = static_cast<int>(parse_int(v, k)); }},
      {"encoder.hidden", [](TrainConfig& c, const std::string& v, const std::string& k) { c.encoder.hidden = static_cast<int>(parse_int(v, k)); }},
      {"encoder.heads", [](TrainConfig& c, const std::string& v, const std::string& k) { c.encoder.heads = static_cast<int>(parse_int(v, k)); }},
      {"encoder.kernel_hidden1", [](TrainConfig& c, const std::string& v, const std::string& k) { c.encoder.kernel_hidden1 = static_cast<int>(parse_int(v, k)); }},
      {"encoder.kernel_hidden2", [](TrainConfig& c, const std::string& v, const std::string& k) { c.encoder.kernel_hidden2 = static_cast<int>(parse_int(v, k)); }},
      {"encoder.frame_coordinates", [](TrainConfig& c, const std::string& v, const std::string& k) { c.encoder.frame_coordinates = parse_bool(v, k); }},
      {"encoder.share_encoders", [](TrainConfig& c, const std::string& v, const std::string& k) { c.encoder.share_encoders = parse_bool(v, k); }},
  };
  return table;
}

}  // namespace

TrainConfig parse_train_config(const std::string& text) {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::string section;
  std::set<std::string> seen;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(lineno) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw Error(ErrorCode::Config, where + "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section != "train" && section != "encoder") {
        throw Error(ErrorCode::Config, where + "unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::Config, where + "expected key = value");
    if (section.empty()) throw Error(ErrorCode::Config, where + "key outside of a section");
    const std::string key = section + "." + trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto it = setters().find(key);
    if (it == setters().end()) throw Error(ErrorCode::Config, where + "unknown key " + key);
    if (!seen.insert(key).second) throw Error(ErrorCode::Config, where + "duplicate key " + key);
    it->second(cfg, value, key);
  }
  cfg.validate();
  return cfg;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::Io, "cannot open config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_train_config(ss.str());
}

std::string format_train_config(const TrainConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << "[train]\n"
     << "epochs = " << c.epochs << "\n"
     << "learning_rate = " << c.learning_rate << "\n"
     << "final_lr_scale = " << c.final_lr_scale << "\n"
     << "beta1 = " << c.beta1 << "\n"
     << "beta2 = " << c.beta2 << "\n"
     << "adam_eps = " << c.adam_eps << "\n"
     << "sample_k = " << c.sample_k << "\n"
     << "monitor_sample_k = " << c.monitor_sample_k << "\n"
     << "lambda_disp = " << c.lambda_disp << "\n"
     << "lambda_corr = " << c.lambda_corr << "\n"
     << "lambda_cons = " << c.lambda_cons << "\n"
     << "jitter = " << c.jitter << "\n"
     << "seed = " << c.seed << "\n\n"
     << "[encoder]\n"
     << "k_neighbors = " << c.encoder.k_neighbors << "\n"
     << "d = " << c.encoder.d << "\n"
     << "hidden = " << c.encoder.hidden << "\n"
     << "heads = " << c.encoder.heads << "\n"
     << "kernel_hidden1 = " << c.encoder.kernel_hidden1 << "\n"
     << "kernel_hidden2 = " << c.encoder.kernel_hidden2 << "\n"
     << "frame_coordinates = " << (c.encoder.frame_coordinates ? "true" : "false") << "\n"
     << "share_encoders = " << (c.encoder.share_encoders ? "true" : "false") << "\n";
  return os.str();
}

}  // namespace reldist
