#pragma once

#include "hawk/schedule.hpp"

namespace hawk {

/// Event classes: 0 is IDLE, then ON/OFF pairs per appliance
/// (1 + 2a = ON of appliance a, 2 + 2a = OFF of appliance a).
inline constexpr int kIdleClass = 0;

inline constexpr int n_event_classes(int n_appliances) { return 2 * n_appliances + 1; }

inline constexpr int event_class(int appliance, schedule::Action action) {
  return 1 + 2 * appliance + (action == schedule::Action::Off ? 1 : 0);
}

inline constexpr int class_appliance(int class_label) { return (class_label - 1) / 2; }

inline constexpr schedule::Action class_action(int class_label) {
  return (class_label - 1) % 2 == 0 ? schedule::Action::On : schedule::Action::Off;
}

}  // namespace hawk
