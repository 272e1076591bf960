#pragma once

#include "channel.hpp"
#include "classifier.hpp"
#include "detector.hpp"
#include "equalizer.hpp"
#include "estimation.hpp"
#include "experiment.hpp"
#include "io.hpp"
#include "rng.hpp"
#include "security.hpp"
#include "signal.hpp"
#include "stats.hpp"
