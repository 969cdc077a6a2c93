#pragma once

#include "csgba/attack.hpp"
#include "csgba/behavior.hpp"
#include "csgba/dataset.hpp"
#include "csgba/env.hpp"
#include "csgba/error.hpp"
#include "csgba/eval.hpp"
#include "csgba/io.hpp"
#include "csgba/numeric.hpp"
#include "csgba/param_file.hpp"
#include "csgba/pipeline.hpp"
#include "csgba/policy.hpp"
#include "csgba/proxy.hpp"
#include "csgba/victims.hpp"
