#pragma once

#include "dynseq/batch.hpp"
#include "dynseq/checkpoint.hpp"
#include "dynseq/config.hpp"
#include "dynseq/dynamic_loss.hpp"
#include "dynseq/gradcheck.hpp"
#include "dynseq/gradcheck_suite.hpp"
#include "dynseq/graph.hpp"
#include "dynseq/market_data.hpp"
#include "dynseq/metrics.hpp"
#include "dynseq/models.hpp"
#include "dynseq/optimizer.hpp"
#include "dynseq/parameters.hpp"
#include "dynseq/random.hpp"
#include "dynseq/report.hpp"
#include "dynseq/sweep.hpp"
#include "dynseq/tensor.hpp"
#include "dynseq/training.hpp"
#include "dynseq/walk_forward.hpp"
