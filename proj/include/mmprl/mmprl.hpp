#pragma once

#include "errors.hpp"
#include "nnet.hpp"
#include "env.hpp"
#include "archive.hpp"
#include "ddpg.hpp"
#include "mapgen.hpp"
#include "mboa.hpp"
#include "synthetic.hpp"
#include "config.hpp"
#include "experiment.hpp"
