#pragma once

#include "smec/adapter.hpp"
#include "smec/dataset.hpp"
#include "smec/error.hpp"
#include "smec/evaluation.hpp"
#include "smec/grad.hpp"
#include "smec/losses.hpp"
#include "smec/memory.hpp"
#include "smec/numerics.hpp"
#include "smec/report.hpp"
#include "smec/trainer.hpp"
