#pragma once

#include "bandlift/bandwidth.hpp"
#include "bandlift/diffusion.hpp"
#include "bandlift/error.hpp"
#include "bandlift/evalkit.hpp"
#include "bandlift/latent_codec.hpp"
#include "bandlift/signal_io.hpp"
#include "bandlift/spectral.hpp"
#include "bandlift/sr_pipeline.hpp"
