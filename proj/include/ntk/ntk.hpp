#pragma once

#include "ntk/activations.hpp"
#include "ntk/dynamics.hpp"
#include "ntk/error.hpp"
#include "ntk/findiff.hpp"
#include "ntk/gauss.hpp"
#include "ntk/io.hpp"
#include "ntk/kernels.hpp"
#include "ntk/network.hpp"
#include "ntk/parallel.hpp"
#include "ntk/random.hpp"
#include "ntk/spectra.hpp"
