#pragma once

#include "rtl/error.hpp"
#include "rtl/numerics.hpp"
#include "rtl/random.hpp"
#include "rtl/parallel.hpp"
#include "rtl/environment.hpp"
#include "rtl/observable.hpp"
#include "rtl/twist.hpp"
#include "rtl/genfun.hpp"
#include "rtl/critical.hpp"
#include "rtl/rice.hpp"
#include "rtl/isotopy.hpp"
#include "rtl/io.hpp"
#include "rtl/cli.hpp"
