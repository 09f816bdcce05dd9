// Copyright (C) 2026 The causalvid authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>

namespace cvs {

enum class EntityClass : int { Pedestrian = 0, Cyclist, Motorbike, Car, Truck };

inline constexpr int kEntityClassCount = 5;
inline constexpr std::array<EntityClass, kEntityClassCount> kAllEntityClasses{
    EntityClass::Pedestrian, EntityClass::Cyclist, EntityClass::Motorbike, EntityClass::Car,
    EntityClass::Truck};

const char* entity_word(EntityClass c);
std::optional<EntityClass> parse_entity(const std::string& word);

struct Rgb {
  std::uint8_t r, g, b;
};

/// Render color of each entity class; disjoint from every background color.
Rgb entity_color(EntityClass c);

/// Axis-aligned pixel box, half-open: [x0, x1) x [y0, y1).
struct Box {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  bool empty() const { return x1 <= x0 || y1 <= y0; }
  long area() const { return empty() ? 0L : static_cast<long>(x1 - x0) * (y1 - y0); }
  bool operator==(const Box&) const = default;
};

Box intersect(const Box& a, const Box& b);
Box hull(const Box& a, const Box& b);
/// Intersection over union; 0 when either box is empty.
double iou(const Box& a, const Box& b);

}  // namespace cvs
