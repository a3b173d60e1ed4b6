#pragma once

#include "hkd/augment.hpp"
#include "hkd/checkpoint.hpp"
#include "hkd/cif.hpp"
#include "hkd/config.hpp"
#include "hkd/ctc.hpp"
#include "hkd/dataset.hpp"
#include "hkd/decode.hpp"
#include "hkd/error.hpp"
#include "hkd/gradcheck.hpp"
#include "hkd/losses.hpp"
#include "hkd/model.hpp"
#include "hkd/nn.hpp"
#include "hkd/ops.hpp"
#include "hkd/optim.hpp"
#include "hkd/teacher.hpp"
#include "hkd/tensor.hpp"
#include "hkd/trainer.hpp"
#ifndef HKD_NO_DISTILL
#include "hkd/distill.hpp"
#include "hkd/suite.hpp"
#endif
