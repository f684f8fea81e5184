#pragma once

#include <span>

#include <Eigen/Core>

namespace mpobm {

template <typename Derived>
std::span<const double> as_span(const Eigen::PlainObjectBase<Derived>& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

template <typename Derived>
std::span<double> as_span(Eigen::PlainObjectBase<Derived>& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

}  // namespace mpobm
