#pragma once

#include "drnn/activation.hpp"
#include "drnn/bounds.hpp"
#include "drnn/config.hpp"
#include "drnn/errors.hpp"
#include "drnn/experiments.hpp"
#include "drnn/init.hpp"
#include "drnn/io.hpp"
#include "drnn/montecarlo.hpp"
#include "drnn/ntk.hpp"
#include "drnn/parallel.hpp"
#include "drnn/random.hpp"
#include "drnn/rnn.hpp"
#include "drnn/teacher.hpp"
#include "drnn/training.hpp"
#include "drnn/version.hpp"
