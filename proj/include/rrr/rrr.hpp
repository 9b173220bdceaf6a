#pragma once

// Umbrella header for the retrieve-rerank-reason engine.

#include "rrr/config.hpp"
#include "rrr/distill.hpp"
#include "rrr/engine.hpp"
#include "rrr/errors.hpp"
#include "rrr/eval.hpp"
#include "rrr/http_backend.hpp"
#include "rrr/judgment.hpp"
#include "rrr/model_client.hpp"
#include "rrr/orchestrator.hpp"
#include "rrr/prompts.hpp"
#include "rrr/reranker.hpp"
#include "rrr/retrieval.hpp"
#include "rrr/retrieval_client.hpp"
#include "rrr/stats.hpp"
#include "rrr/text.hpp"
#include "rrr/trajectory.hpp"
#include "rrr/tts.hpp"
