#pragma once

#include "adaspa/blocks.hpp"
#include "adaspa/config.hpp"
#include "adaspa/core.hpp"
#include "adaspa/experiments.hpp"
#include "adaspa/flashblock.hpp"
#include "adaspa/oracle.hpp"
#include "adaspa/pipeline.hpp"
#include "adaspa/search.hpp"
#include "adaspa/sparse_exec.hpp"
#include "adaspa/workload.hpp"
