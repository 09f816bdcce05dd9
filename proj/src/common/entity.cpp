// Copyright (C) 2026 The causalvid authors
// SPDX-License-Identifier: Apache-2.0

#include "causalvid/entity.hpp"

#include <algorithm>

namespace cvs {

const char* entity_word(EntityClass c) {
  switch (c) {
    case EntityClass::Pedestrian: return "pedestrian";
    case EntityClass::Cyclist: return "cyclist";
    case EntityClass::Motorbike: return "motorbike";
    case EntityClass::Car: return "car";
    case EntityClass::Truck: return "truck";
  }
  return "pedestrian";
}

std::optional<EntityClass> parse_entity(const std::string& word) {
  for (auto c : kAllEntityClasses)
    if (word == entity_word(c)) return c;
  return std::nullopt;
}

Rgb entity_color(EntityClass c) {
  switch (c) {
    case EntityClass::Pedestrian: return {230, 40, 40};
    case EntityClass::Cyclist: return {40, 210, 60};
    case EntityClass::Motorbike: return {220, 50, 220};
    case EntityClass::Car: return {40, 90, 240};
    case EntityClass::Truck: return {240, 220, 30};
  }
  return {0, 0, 0};
}

Box intersect(const Box& a, const Box& b) {
  return {std::max(a.x0, b.x0), std::max(a.y0, b.y0), std::min(a.x1, b.x1), std::min(a.y1, b.y1)};
}

Box hull(const Box& a, const Box& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  return {std::min(a.x0, b.x0), std::min(a.y0, b.y0), std::max(a.x1, b.x1), std::max(a.y1, b.y1)};
}

double iou(const Box& a, const Box& b) {
  if (a.empty() || b.empty()) return 0.0;
  const long inter = intersect(a, b).area();
  if (inter == 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(a.area() + b.area() - inter);
}

}  // namespace cvs
