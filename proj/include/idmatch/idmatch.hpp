#ifndef IDMATCH_IDMATCH_HPP_
#define IDMATCH_IDMATCH_HPP_

#include "idmatch/checkpoint.hpp"
#include "idmatch/common.hpp"
#include "idmatch/config_json.hpp"
#include "idmatch/dataset.hpp"
#include "idmatch/evaluation.hpp"
#include "idmatch/experiments.hpp"
#include "idmatch/imprinting.hpp"
#include "idmatch/losses.hpp"
#include "idmatch/network.hpp"
#include "idmatch/training.hpp"

#endif  // IDMATCH_IDMATCH_HPP_
