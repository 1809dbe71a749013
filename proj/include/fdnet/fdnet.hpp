#pragma once

// Umbrella header.

#include <fdnet/archive.hpp>
#include <fdnet/attack.hpp>
#include <fdnet/checkpoint.hpp>
#include <fdnet/config.hpp>
#include <fdnet/dataset.hpp>
#include <fdnet/denoise.hpp>
#include <fdnet/eval.hpp>
#include <fdnet/gradcheck.hpp>
#include <fdnet/gradcheck_suite.hpp>
#include <fdnet/image_io.hpp>
#include <fdnet/layers.hpp>
#include <fdnet/model.hpp>
#include <fdnet/ops.hpp>
#include <fdnet/tensor.hpp>
#include <fdnet/train.hpp>
