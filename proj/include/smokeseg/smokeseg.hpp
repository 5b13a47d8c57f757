#pragma once

// Umbrella include for the whole library.

#include "smokeseg/checkpoint.hpp"
#include "smokeseg/compositor.hpp"
#include "smokeseg/config.hpp"
#include "smokeseg/errors.hpp"
#include "smokeseg/gradcheck.hpp"
#include "smokeseg/image.hpp"
#include "smokeseg/manifest.hpp"
#include "smokeseg/metrics.hpp"
#include "smokeseg/net.hpp"
#include "smokeseg/net_json.hpp"
#include "smokeseg/ops.hpp"
#include "smokeseg/png_io.hpp"
#include "smokeseg/rng.hpp"
#include "smokeseg/tensor.hpp"
#include "smokeseg/trainer.hpp"
