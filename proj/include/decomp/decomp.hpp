#pragma once

// Class-specific influential feature selection and classifier-head
// decomposition over exported CNN features.

#include "decomp/attribution.hpp"
#include "decomp/error.hpp"
#include "decomp/eval.hpp"
#include "decomp/features.hpp"
#include "decomp/finetune.hpp"
#include "decomp/head.hpp"
#include "decomp/influence.hpp"
#include "decomp/manifest.hpp"
#include "decomp/planted.hpp"
#include "decomp/tensor_io.hpp"
