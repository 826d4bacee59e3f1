#pragma once

#include "magnet/backends.hpp"
#include "magnet/config.hpp"
#include "magnet/errors.hpp"
#include "magnet/eval.hpp"
#include "magnet/external.hpp"
#include "magnet/fixtures.hpp"
#include "magnet/io.hpp"
#include "magnet/pipeline.hpp"
#include "magnet/selection.hpp"
#include "magnet/tensor.hpp"
#include "magnet/tiling.hpp"
