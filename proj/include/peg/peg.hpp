#pragma once

#include "peg/checkpoint.hpp"
#include "peg/commands.hpp"
#include "peg/config.hpp"
#include "peg/encoder.hpp"
#include "peg/error.hpp"
#include "peg/eval.hpp"
#include "peg/matrix.hpp"
#include "peg/mining.hpp"
#include "peg/optimizer.hpp"
#include "peg/progressive_loss.hpp"
#include "peg/records.hpp"
#include "peg/sim.hpp"
#include "peg/synthetic.hpp"
#include "peg/tokenizer.hpp"
#include "peg/trainer.hpp"
