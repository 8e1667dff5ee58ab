#pragma once

#include "voxelfm/augment.hpp"
#include "voxelfm/checkpoint.hpp"
#include "voxelfm/config.hpp"
#include "voxelfm/embeddings.hpp"
#include "voxelfm/encoder.hpp"
#include "voxelfm/error.hpp"
#include "voxelfm/evalmetrics.hpp"
#include "voxelfm/io.hpp"
#include "voxelfm/objectives.hpp"
#include "voxelfm/optim.hpp"
#include "voxelfm/phantom.hpp"
#include "voxelfm/png.hpp"
#include "voxelfm/probe.hpp"
#include "voxelfm/rng.hpp"
#include "voxelfm/sampler.hpp"
#include "voxelfm/semantics.hpp"
#include "voxelfm/service.hpp"
#include "voxelfm/trainer.hpp"
#include "voxelfm/volume.hpp"
