#pragma once

#include "banyan/bench.hpp"
#include "banyan/corpus.hpp"
#include "banyan/embedding.hpp"
#include "banyan/eval.hpp"
#include "banyan/model.hpp"
#include "banyan/objectives.hpp"
#include "banyan/rng.hpp"
#include "banyan/run.hpp"
#include "banyan/structure.hpp"
#include "banyan/training.hpp"
