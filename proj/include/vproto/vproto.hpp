#ifndef VPROTO_VPROTO_HPP
#define VPROTO_VPROTO_HPP

#include "vproto/core_math.hpp"
#include "vproto/emt.hpp"
#include "vproto/error.hpp"
#include "vproto/gap_analysis.hpp"
#include "vproto/localization.hpp"
#include "vproto/losses.hpp"
#include "vproto/matrix.hpp"
#include "vproto/phase2.hpp"
#include "vproto/proto_learn.hpp"
#include "vproto/rng.hpp"
#include "vproto/synthgen.hpp"
#include "vproto/types.hpp"
#include "vproto/verify.hpp"

#endif  // VPROTO_VPROTO_HPP
