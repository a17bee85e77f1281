#pragma once

#include "sscd/config.hpp"
#include "sscd/detect.hpp"
#include "sscd/embed.hpp"
#include "sscd/ensemble.hpp"
#include "sscd/error.hpp"
#include "sscd/eval.hpp"
#include "sscd/extract.hpp"
#include "sscd/fragment.hpp"
#include "sscd/hnsw.hpp"
#include "sscd/index.hpp"
#include "sscd/lexer.hpp"
#include "sscd/pipeline.hpp"
#include "sscd/process_provider.hpp"
#include "sscd/remote.hpp"
#include "sscd/util.hpp"
