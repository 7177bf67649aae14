#pragma once

#include "snn/classifier.hpp"
#include "snn/ensemble.hpp"
#include "snn/error.hpp"
#include "snn/feature_store.hpp"
#include "snn/joint.hpp"
#include "snn/report.hpp"
#include "snn/stacking.hpp"
#include "snn/sweep.hpp"
#include "snn/transfer_study.hpp"
