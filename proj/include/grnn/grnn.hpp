#ifndef GRNN_GRNN_HPP_
#define GRNN_GRNN_HPP_

#include "grnn/cells.hpp"
#include "grnn/data.hpp"
#include "grnn/interpret.hpp"
#include "grnn/linalg.hpp"
#include "grnn/metrics.hpp"
#include "grnn/models.hpp"
#include "grnn/training.hpp"

#endif  // GRNN_GRNN_HPP_
