#pragma once

#include <vector>

#include <Eigen/Dense>

#include "fairshare/network.hpp"
#include "fairshare/phase_type.hpp"

namespace fairshare {

// One fully derived heavy-traffic instance.
struct Model {
  NetworkSpec spec;
  std::vector<PhaseTypeDist> dists;
  TrafficProfile profile;
  PhaseLayout layout;

  Model() = default;
  Model(NetworkSpec s, std::vector<PhaseTypeDist> d, TrafficProfile p)
      : spec(std::move(s)), dists(std::move(d)), profile(std::move(p)), layout(dists) {}
};

}  // namespace fairshare
