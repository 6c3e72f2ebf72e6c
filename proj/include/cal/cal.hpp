#pragma once

#include "classifier.hpp"
#include "config.hpp"
#include "conformal.hpp"
#include "corpus.hpp"
#include "embed.hpp"
#include "engine.hpp"
#include "metrics.hpp"
#include "select.hpp"
#include "sim.hpp"
#include "workspace.hpp"
