#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "das/random.hpp"
#include "das/sample.hpp"

namespace das {

struct Band {
  double lo = 0.0;
  double hi = 0.0;
  double draw(Rng& rng) const { return lo == hi ? lo : rng.uniform(lo, hi); }
  bool contains(double x) const { return x >= lo && x <= hi; }
};

/// Ranges from which per-sample event parameters are drawn.
struct EventBands {
  Band walking_speed{1.0, 1.8};
  Band cycling_speed{3.0, 7.0};
  Band step_cadence{1.6, 2.4};
  /// Wheel circumference in meters; cycling cadence = speed / circumference.
  Band wheel_circumference{2.0, 2.2};
  Band walking_amplitude{0.8, 1.2};
  Band cycling_amplitude{0.8, 1.2};
};

/// Shape of the source waveforms. Shared by all nodes unless overridden.
struct WaveformModel {
  double impulse_decay = 0.040;   // s
  double impulse_freq = 30.0;     // Hz
  double spatial_sigma = 2.0;     // bins
  double cycling_jitter = 0.35;   // broadband component, relative to the carrier
  double cycling_mod_depth = 0.3;
  double cycling_mod_freq = 0.7;  // Hz
  double clutter_amplitude = 0.6; // relative to the node's event scale
};

/// Deployment and environment parameters of one DAS node.
struct NodeProfile {
  std::string node_id;
  double gain = 1.0;
  double attenuation = 1.0;
  double noise_std = 0.02;
  double lowpass_cutoff = 60.0;
  double sampling_rate = 500.0;
  double bin_spacing = 1.0;
  double clutter_rate = 0.0;
  std::uint64_t seed = 0;
  EventBands bands{};
  WaveformModel waveform{};

  /// Throws Error(InvalidArgument) when an invariant is violated.
  void validate() const;
  double event_scale() const { return gain * attenuation; }
};

struct ActivityEvent {
  Activity kind = Activity::Walking;
  double speed = 1.4;       // m/s along the fiber
  double cadence = 2.0;     // Hz
  double amplitude = 1.0;   // rad, before node scaling
  double start_bin = 32.0;  // source row at the first column (fractional)
  double start_time = 0.0;  // s since epoch at the first column

  void validate() const;
};

struct WindowShape {
  std::size_t rows = kWindowRows;
  std::size_t cols = kWindowCols;
};

/// Optional instrumentation filled in by the generator.
struct SynthTrace {
  std::vector<double> source_row;  // per column
  std::vector<double> excitation;  // clean temporal excitation before spatial spreading, per column
  std::vector<double> impulse_times;
  std::vector<double> impulse_rows;
  double scale = 0.0;  // gain * attenuation * amplitude
};

/// Renders one event. With noise_std = 0 and clutter_rate = 0 the result is
/// exactly linear in gain * attenuation * amplitude. Throws
/// Error(NotObservable) when the source never enters the frame.
PhaseWindow synthesize_event(const NodeProfile& profile, const ActivityEvent& event, Rng& rng,
                             WindowShape shape = {}, SynthTrace* trace = nullptr);

/// Draws an event of the given kind from the profile's bands, placed so its
/// trace crosses the middle of the window.
ActivityEvent draw_event(const NodeProfile& profile, Activity kind, Rng& rng, WindowShape shape = {});

struct DatasetOptions {
  std::size_t n_samples = 100;
  double class_balance = 0.5;  // fraction of cycling samples
  bool stratified = true;
  WindowShape shape{};
};

/// Deterministic in (profile.seed, seed).
std::vector<LabeledSample> synthesize_dataset(const NodeProfile& profile, const DatasetOptions& options,
                                              std::uint64_t seed);

/// Red-like, CA-like and CB-like profiles, in that order.
std::vector<NodeProfile> reference_profiles();
NodeProfile reference_profile(const std::string& node_id);

// Continuous recordings for the synchronization path.

struct TrackPoint {
  double time = 0.0;      // s since epoch
  double position = 0.0;  // m along the fiber
};

struct Recording {
  std::size_t bins = 0;
  std::size_t samples = 0;
  std::vector<float> data;  // bins x samples, row-major
  double start_time = 0.0;
  double sampling_rate = 500.0;
  double bin_spacing = 1.0;
  std::string node_id;

  float at(std::size_t b, std::size_t t) const { return data[b * samples + t]; }
  double end_time() const { return start_time + static_cast<double>(samples - 1) / sampling_rate; }
};

struct RecordedEvent {
  ActivityEvent event;
  std::vector<TrackPoint> track;  // ground-truth positions, one per recording column
};

/// Renders a long recording containing the given events; each event's start_bin
/// is a fiber bin index and start_time is absolute.
Recording synthesize_recording(const NodeProfile& profile, std::size_t bins, std::size_t samples,
                               double start_time, const std::vector<ActivityEvent>& events, Rng& rng,
                               std::vector<RecordedEvent>* truth = nullptr);

}  // namespace das
