#ifndef PROXYDEC_PROXYDEC_HPP
#define PROXYDEC_PROXYDEC_HPP

#include "proxydec/backends.hpp"
#include "proxydec/codec.hpp"
#include "proxydec/core.hpp"
#include "proxydec/engine.hpp"
#include "proxydec/eval.hpp"
#include "proxydec/factory.hpp"
#include "proxydec/remote.hpp"
#include "proxydec/rng.hpp"
#include "proxydec/sampling.hpp"
#include "proxydec/scheduler.hpp"
#include "proxydec/steering.hpp"

#endif  // PROXYDEC_PROXYDEC_HPP
