#include "tpm/config.hpp"

#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace tpm {

std::string to_string(StageOrder v) {
  switch (v) {
    case StageOrder::LocalRegionalGlobal: return "local_regional_global";
    case StageOrder::GlobalLocalRegional: return "global_local_regional";
    case StageOrder::RegionalLocalGlobal: return "regional_local_global";
  }
  return "?";
}

std::string to_string(WindowScanVariant v) {
  return v == WindowScanVariant::Mwss ? "mwss" : "ss2d";
}

std::string to_string(GlobalScanVariant v) {
  return v == GlobalScanVariant::Mgss ? "mgss" : "ss2d";
}

std::string to_string(HfcaSource v) {
  return v == HfcaSource::ProcessedFeature ? "processed" : "degraded";
}

void ModelConfig::validate() const {
  auto req = [](bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument("model config: " + msg);
  };
  req(groups >= 1, "groups must be >= 1");
  req(blocks_per_group >= 1, "blocks_per_group must be >= 1");
  req(width >= 4 && width % 2 == 0, "width must be even");
  req(width % 4 == 0, "width must be divisible by 4");
  req(heads >= 1 && width % heads == 0, "width must be divisible by heads");
  req(scale == 2 || scale == 3 || scale == 4, "scale must be 2, 3 or 4");
  req(window_attn >= 2, "window_attn too small");
  req(wif >= 2 && wff >= 2, "scan windows too small");
  req(wif <= wff, "wif must not exceed wff");
  req(n_state >= 1, "n_state must be >= 1");
  req(ffn_ratio >= 1, "ffn_ratio must be >= 1");
}

int ModelConfig::pad_multiple() const {
  const int a = std::lcm(window_attn, wif);
  return std::lcm(a, wff);
}

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  os << "groups=" << groups << '\n'
     << "blocks_per_group=" << blocks_per_group << '\n'
     << "width=" << width << '\n'
     << "scale=" << scale << '\n'
     << "window_attn=" << window_attn << '\n'
     << "wif=" << wif << '\n'
     << "wff=" << wff << '\n'
     << "n_state=" << n_state << '\n'
     << "heads=" << heads << '\n'
     << "ffn_ratio=" << ffn_ratio << '\n'
     << "stage_order=" << to_string(stage_order) << '\n'
     << "scan_window=" << to_string(scan_window) << '\n'
     << "scan_global=" << to_string(scan_global) << '\n'
     << "use_hfm=" << (use_hfm ? 1 : 0) << '\n'
     << "hfca_source=" << to_string(hfca_source) << '\n';
  return os.str();
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  ModelConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    // strip comments and whitespace
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected key=value, got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    auto as_int = [&](auto& field) { field = std::stoll(val); };
    if (key == "groups") cfg.groups = std::stoi(val);
    else if (key == "blocks_per_group") cfg.blocks_per_group = std::stoi(val);
    else if (key == "width") as_int(cfg.width);
    else if (key == "scale") cfg.scale = std::stoi(val);
    else if (key == "window_attn") cfg.window_attn = std::stoi(val);
    else if (key == "wif") cfg.wif = std::stoi(val);
    else if (key == "wff") cfg.wff = std::stoi(val);
    else if (key == "n_state") as_int(cfg.n_state);
    else if (key == "heads") as_int(cfg.heads);
    else if (key == "ffn_ratio") cfg.ffn_ratio = std::stoi(val);
    else if (key == "stage_order") {
      if (val == "local_regional_global") cfg.stage_order = StageOrder::LocalRegionalGlobal;
      else if (val == "global_local_regional") cfg.stage_order = StageOrder::GlobalLocalRegional;
      else if (val == "regional_local_global") cfg.stage_order = StageOrder::RegionalLocalGlobal;
      else throw std::invalid_argument("config: unknown stage_order '" + val + "'");
    } else if (key == "scan_window") {
      if (val == "mwss") cfg.scan_window = WindowScanVariant::Mwss;
      else if (val == "ss2d") cfg.scan_window = WindowScanVariant::Ss2d;
      else throw std::invalid_argument("config: unknown scan_window '" + val + "'");
    } else if (key == "scan_global") {
      if (val == "mgss") cfg.scan_global = GlobalScanVariant::Mgss;
      else if (val == "ss2d") cfg.scan_global = GlobalScanVariant::Ss2d;
      else throw std::invalid_argument("config: unknown scan_global '" + val + "'");
    } else if (key == "use_hfm") {
      cfg.use_hfm = (val == "1" || val == "true");
    } else if (key == "hfca_source") {
      if (val == "processed") cfg.hfca_source = HfcaSource::ProcessedFeature;
      else if (val == "degraded") cfg.hfca_source = HfcaSource::DegradedBranch;
      else throw std::invalid_argument("config: unknown hfca_source '" + val + "'");
    } else {
      throw std::invalid_argument("config: unknown key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

}  // namespace tpm
