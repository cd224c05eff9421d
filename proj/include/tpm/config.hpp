#pragma once

#include <cstdint>
#include <string>

#include "tpm/freq_refine.hpp"

namespace tpm {

// Order of the three modeling stages inside a group.
enum class StageOrder {
  LocalRegionalGlobal,   // TL -> WSML (per block), GSML last
  GlobalLocalRegional,   // GSML first, then TL -> WSML blocks
  RegionalLocalGlobal,   // WSML -> TL (per block), GSML last
};

enum class WindowScanVariant { Mwss, Ss2d };
enum class GlobalScanVariant { Mgss, Ss2d };

struct ModelConfig {
  int groups = 4;
  int blocks_per_group = 4;
  std::int64_t width = 48;
  int scale = 4;
  int window_attn = 16;
  int wif = 16;
  int wff = 32;
  std::int64_t n_state = 8;
  std::int64_t heads = 4;
  // hidden width multiplier of every layer's FFN; 1 matches the published
  // parameter budget
  int ffn_ratio = 1;
  StageOrder stage_order = StageOrder::LocalRegionalGlobal;
  WindowScanVariant scan_window = WindowScanVariant::Mwss;
  GlobalScanVariant scan_global = GlobalScanVariant::Mgss;
  bool use_hfm = true;
  HfcaSource hfca_source = HfcaSource::ProcessedFeature;

  void validate() const;

  // spatial extents are padded up to a multiple of this before the groups
  int pad_multiple() const;

  // canonical key=value text; stable ordering, round-trips through parse
  std::string to_text() const;
  static ModelConfig from_text(const std::string& text);

  bool operator==(const ModelConfig&) const = default;
};

std::string to_string(StageOrder v);
std::string to_string(WindowScanVariant v);
std::string to_string(GlobalScanVariant v);
std::string to_string(HfcaSource v);

}  // namespace tpm
