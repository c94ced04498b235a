#pragma once

#include <iosfwd>
#include <string>

#include "cdlds/em.hpp"
#include "cdlds/simulate.hpp"

namespace cdlds {

/// CSV with header t,z1..zm, one row per observation, %.17g.
void write_observations_csv(std::ostream& out, const TimedObservations& data);

/// Same layout with x1..xn latent columns appended when emit_latent is set.
void write_trajectory_csv(std::ostream& out, const Trajectory& traj, bool emit_latent);

/// Reads t,z1..zm; extra x* columns are ignored. Throws InvalidArgument
/// with the line number on malformed input.
TimedObservations read_observations_csv(std::istream& in);

/// JSON document: matrices as row-major nested arrays, vectors as arrays.
std::string model_params_to_json(const ModelParams& params);

/// Inverse of model_params_to_json. Missing or mis-shaped keys throw InvalidArgument.
ModelParams model_params_from_json(const std::string& text);

/// loglik_trace, loglik_initial, convergence flags, warnings and final parameters.
std::string em_report_to_json(const EMReport& report);

}  // namespace cdlds
