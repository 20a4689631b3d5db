#pragma once

#include "casreg/adam.hpp"
#include "casreg/bank.hpp"
#include "casreg/core.hpp"
#include "casreg/deform.hpp"
#include "casreg/evaluation.hpp"
#include "casreg/io.hpp"
#include "casreg/mas.hpp"
#include "casreg/parallel.hpp"
#include "casreg/phantom.hpp"
#include "casreg/registration.hpp"
#include "casreg/rigid.hpp"
#include "casreg/similarity.hpp"
#include "casreg/suite.hpp"
#include "casreg/volume.hpp"

namespace casreg {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace casreg
