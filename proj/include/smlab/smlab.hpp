#pragma once

#include "smlab/builtins.hpp"
#include "smlab/csv.hpp"
#include "smlab/errors.hpp"
#include "smlab/experiments.hpp"
#include "smlab/format.hpp"
#include "smlab/imputer.hpp"
#include "smlab/inference.hpp"
#include "smlab/mechanism.hpp"
#include "smlab/mechanism_io.hpp"
#include "smlab/parallel.hpp"
#include "smlab/random.hpp"
#include "smlab/regression.hpp"
#include "smlab/structure.hpp"
#include "smlab/tabular.hpp"
