#pragma once

#include "samam/adam.hpp"
#include "samam/checkpoint.hpp"
#include "samam/config.hpp"
#include "samam/image.hpp"
#include "samam/loss.hpp"
#include "samam/network.hpp"
#include "samam/ops.hpp"
#include "samam/savssm.hpp"
#include "samam/scan_order.hpp"
#include "samam/ssm.hpp"
#include "samam/tensor.hpp"
#include "samam/train.hpp"
