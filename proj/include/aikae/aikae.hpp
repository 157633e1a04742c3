#pragma once

#include "aikae/tensor.hpp"
#include "aikae/linalg.hpp"
#include "aikae/tape.hpp"
#include "aikae/optim.hpp"
#include "aikae/gradcheck.hpp"
#include "aikae/layers.hpp"
#include "aikae/flows.hpp"
#include "aikae/model.hpp"
#include "aikae/checkpoint.hpp"
#include "aikae/losses.hpp"
#include "aikae/data.hpp"
#include "aikae/train.hpp"
#include "aikae/assimilation.hpp"
#include "aikae/config.hpp"
#include "aikae/commands.hpp"
