#pragma once

#include "amsnet/checkpoint.hpp"
#include "amsnet/datasets.hpp"
#include "amsnet/denoisers.hpp"
#include "amsnet/error.hpp"
#include "amsnet/evaluation.hpp"
#include "amsnet/image.hpp"
#include "amsnet/inference.hpp"
#include "amsnet/losses.hpp"
#include "amsnet/masking.hpp"
#include "amsnet/pixel_downsample.hpp"
#include "amsnet/png_io.hpp"
#include "amsnet/rng.hpp"
#include "amsnet/training.hpp"
