#pragma once

#include "egcnn/checkpoint.hpp"
#include "egcnn/data.hpp"
#include "egcnn/edge_field.hpp"
#include "egcnn/grid.hpp"
#include "egcnn/image_io.hpp"
#include "egcnn/layers.hpp"
#include "egcnn/metrics.hpp"
#include "egcnn/network.hpp"
#include "egcnn/numerics.hpp"
#include "egcnn/pipeline.hpp"
#include "egcnn/rng.hpp"
