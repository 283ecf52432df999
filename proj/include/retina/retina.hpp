#pragma once

// Umbrella header for the DR grading toolkit.

#include "retina/augment.hpp"
#include "retina/cascade.hpp"
#include "retina/checkpoint.hpp"
#include "retina/config.hpp"
#include "retina/dataset.hpp"
#include "retina/errors.hpp"
#include "retina/image.hpp"
#include "retina/imageops.hpp"
#include "retina/metrics.hpp"
#include "retina/modelkit.hpp"
#include "retina/pipeline.hpp"
#include "retina/png_io.hpp"
#include "retina/rng.hpp"
#include "retina/synthetic.hpp"
#include "retina/tensor.hpp"
#include "retina/trainer.hpp"
