#pragma once

#include "ssud/agreement.hpp"
#include "ssud/attention.hpp"
#include "ssud/attention_io.hpp"
#include "ssud/attention_source.hpp"
#include "ssud/error.hpp"
#include "ssud/evaluation.hpp"
#include "ssud/headsel.hpp"
#include "ssud/induction.hpp"
#include "ssud/pipeline.hpp"
#include "ssud/service_client.hpp"
#include "ssud/substitution.hpp"
#include "ssud/substitution_cache.hpp"
#include "ssud/treebank.hpp"
