#pragma once

// Labeled fixtures shared by the unit tests and the acceptance runner.

#include <string_view>
#include <vector>

#include <fmt/format.h>

#include "b3d/core/record.hpp"

namespace b3d::fixtures {

// 60 scored records, 15 per source, interleaved by index. Score strings per
// source, with the hand count of scores at or above the default threshold:
//   rendered_asset   012345543210455   >=4: 7
//   synthetic_nvs_a  554433221100345   >=4: 6
//   synthetic_nvs_b  555554444333210   >=5: 5
//   single_view_2d   000111222333444   >=4: 3
inline constexpr std::string_view kFilterScores[4] = {"012345543210455", "554433221100345", "555554444333210",
                                                      "000111222333444"};
inline constexpr int kFilterKept[4] = {7, 6, 5, 3};
inline constexpr int kFilterKeptTotal = 21;

inline std::vector<MultiViewRecord> filter_fixture() {
  std::vector<MultiViewRecord> out;
  for (int i = 0; i < 60; ++i) {
    MultiViewRecord r;
    r.record_id = fmt::format("fx{:02}", i);
    r.source = kAllSources[static_cast<std::size_t>(i % 4)];
    r.quality = label_from_score(kFilterScores[i % 4][static_cast<std::size_t>(i / 4)] - '0');
    out.push_back(std::move(r));
  }
  return out;
}

// Confusion table for the synthetic column, in percent of items:
// pred HQ / gt HQ 34.5, pred HQ / gt LQ 11.5, pred LQ / gt HQ 17.0,
// pred LQ / gt LQ 37.0. Over 200 items that is 69 / 23 / 34 / 74.
struct ConfusionFixture {
  std::vector<int> predicted;
  std::vector<bool> hq;
};

inline ConfusionFixture confusion_fixture() {
  ConfusionFixture f;
  auto add = [&](int n, int score, bool gt) {
    for (int i = 0; i < n; ++i) {
      f.predicted.push_back(score);
      f.hq.push_back(gt);
    }
  };
  // scores spread over the label range on each side of the 4 cut
  add(40, 5, true);
  add(29, 4, true);
  add(23, 4, false);
  add(20, 3, true);
  add(14, 1, true);
  add(50, 2, false);
  add(24, 0, false);
  return f;
}

}  // namespace b3d::fixtures
