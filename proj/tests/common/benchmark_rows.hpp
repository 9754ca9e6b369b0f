#pragma once

#include <array>

// Published benchmark rows: pose accuracy, physical realism, overall success
// (percent), one per model variant or training-data fraction.
namespace sport::fixture {

inline constexpr std::array<std::array<double, 3>, 7> kBenchmarkRows{{
    {59.64, 70.48, 46.19},
    {87.80, 76.40, 69.49},
    {83.46, 77.68, 65.59},
    {36.38, 75.04, 27.65},
    {80.48, 72.16, 62.42},
    {76.17, 71.59, 58.12},
    {64.89, 63.17, 46.73},
}};

}  // namespace sport::fixture
