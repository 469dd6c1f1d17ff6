#pragma once

#include "fvnet/bundle.hpp"
#include "fvnet/classifier.hpp"
#include "fvnet/config.hpp"
#include "fvnet/dataset.hpp"
#include "fvnet/error.hpp"
#include "fvnet/extractor.hpp"
#include "fvnet/fisher.hpp"
#include "fvnet/gmm.hpp"
#include "fvnet/gradcheck.hpp"
#include "fvnet/network.hpp"
#include "fvnet/optim.hpp"
#include "fvnet/projection.hpp"
#include "fvnet/report.hpp"
#include "fvnet/rng.hpp"
#include "fvnet/st_pool.hpp"
#include "fvnet/tensor.hpp"
#include "fvnet/tensor_io.hpp"
#include "fvnet/train.hpp"
#include "fvnet/types.hpp"
