#pragma once

#include <cstddef>
#include <string>

#include "longfoley/autograd.hpp"
#include "longfoley/conditioning.hpp"
#include "longfoley/rng.hpp"
#include "longfoley/streams.hpp"

namespace lf {

enum class AdapterInit { zero_out, random };

// Bottleneck MLP: down [input x bottleneck] -> GELU -> up [bottleneck x output].
struct AdapterConfig {
  std::size_t input_dim = 64;
  std::size_t bottleneck_dim = 16;
  std::size_t output_dim = 64;
  AdapterInit init = AdapterInit::zero_out;

  void validate() const;
  std::size_t num_scalars() const;
};

// Full-video feature streams shared by every clip of one parent video.
struct GlobalFeatureBundle {
  TokenStream visual;
  TokenStream text;
  TokenStream sync;

  double duration_s() const { return sync.duration_s(); }
  // Invariant violations; durations of visual and sync must agree within one frame.
  std::vector<std::string> check(const DimProfile& dims) const;
};

inline constexpr const char* kGlobalAdapter = "h_global";
inline constexpr const char* kSyncAdapter = "h_syn";

// Adds `<prefix>.down.{w,b}` and `<prefix>.up.{w,b}`.
void init_adapter(ParameterStore& store, const std::string& prefix, const AdapterConfig& cfg, Philox& rng);

// Configs of h_global (hidden -> 2*hidden) and h_syn (hidden -> hidden).
AdapterConfig global_adapter_config(const ConditioningConfig& cond, std::size_t bottleneck, AdapterInit init);
AdapterConfig sync_adapter_config(const ConditioningConfig& cond, std::size_t bottleneck, AdapterInit init);

// Both adapters with the given bottleneck; h_global draws from stream
// "adapters/h_global" and h_syn from "adapters/h_syn".
void init_dual_adapters(ParameterStore& store, const ConditioningConfig& cond, std::size_t bottleneck,
                        AdapterInit init, std::uint64_t seed);

Var adapter_forward(const Var& x, ParameterStore& adapters, const std::string& prefix);

// c_g + h_global(mean_t(visual projection of the global visual stream)).
GlobalCondition fuse_global(const GlobalCondition& c_g, const GlobalFeatureBundle& bundle, ParameterStore& adapters,
                            ParameterStore& base);

// c_f + h_syn(window slice of the global sync stream projected and resampled to 31.25 fps).
FrameCondition fuse_frame(const FrameCondition& c_f, const GlobalFeatureBundle& bundle, ParameterStore& adapters,
                          ParameterStore& base, const ClipWindow& window);

// Adapter scalars / base scalars.
double param_budget(const ParameterStore& base, const ParameterStore& adapters);

}  // namespace lf
