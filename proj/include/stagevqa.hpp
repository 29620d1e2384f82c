#pragma once

#include "stagevqa/backend.hpp"
#include "stagevqa/corpus.hpp"
#include "stagevqa/error.hpp"
#include "stagevqa/extract.hpp"
#include "stagevqa/lexicon.hpp"
#include "stagevqa/merge.hpp"
#include "stagevqa/metrics.hpp"
#include "stagevqa/mock_backend.hpp"
#include "stagevqa/parallel.hpp"
#include "stagevqa/prompts.hpp"
#include "stagevqa/qagen.hpp"
#include "stagevqa/rng.hpp"
#include "stagevqa/similarity.hpp"
#include "stagevqa/synonyms.hpp"
#include "stagevqa/text.hpp"
#include "stagevqa/trek.hpp"
#include "stagevqa/trie.hpp"
