#pragma once
// Umbrella header.

#include "stylenet/autodiff.hpp"
#include "stylenet/checkpoint.hpp"
#include "stylenet/experiment.hpp"
#include "stylenet/gradcheck_suite.hpp"
#include "stylenet/hand_graph.hpp"
#include "stylenet/model.hpp"
#include "stylenet/rng.hpp"
#include "stylenet/skeleton_data.hpp"
#include "stylenet/synth_typing.hpp"
#include "stylenet/trainer.hpp"
