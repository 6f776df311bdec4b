#pragma once

#include "nbwatch/nn/adam.hpp"
#include "nbwatch/nn/checkpoint.hpp"
#include "nbwatch/nn/engine.hpp"
#include "nbwatch/nn/gradcheck.hpp"
#include "nbwatch/nn/layers.hpp"
#include "nbwatch/nn/model.hpp"
#include "nbwatch/nn/train.hpp"
