#pragma once

#include <vector>

#include "rankloss/network.hpp"

namespace rankloss::reference {

// Straight-line serial implementations. They share no kernel code with the
// OpenMP paths; tests check the parallel library against these, and the
// benchmark uses them as its baseline. Keep them dumb.

std::vector<double> forward(const Network& net, const std::vector<double>& x);

double dataset_loss(const Network& net, const Dataset& data);

GradientSnapshot gradients(const Network& net, const Dataset& data);

// Central differences on every weight entry, loss evaluated with the serial
// path above. Expensive; test-sized nets only.
GradientSnapshot finite_difference_gradients(const Network& net,
                                             const Dataset& data,
                                             double step = 1e-5);

}  // namespace rankloss::reference
