#include "das/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "das/error.hpp"

namespace das {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct Frame {
  std::size_t rows;
  std::size_t cols;
  double row_origin;   // fiber bin of row 0
  double time_origin;  // s at column 0
  double sampling_rate;
};

double gaussian(double d, double sigma) { return std::exp(-0.5 * (d * d) / (sigma * sigma)); }

double source_row(const ActivityEvent& ev, const NodeProfile& p, double t) {
  return ev.start_bin + ev.speed * (t - ev.start_time) / p.bin_spacing;
}

/// Single-pole low-pass, applied in place along one row.
void lowpass_row(std::span<double> row, double cutoff, double sampling_rate) {
  const double a = 1.0 - std::exp(-kTwoPi * cutoff / sampling_rate);
  double y = 0.0;
  for (double& x : row) {
    y += a * (x - y);
    x = y;
  }
}

std::size_t preroll_columns(const NodeProfile& p) {
  const double settle = std::max(6.0 * p.waveform.impulse_decay, 5.0 / (kTwoPi * p.lowpass_cutoff));
  return static_cast<std::size_t>(std::ceil(settle * p.sampling_rate));
}

/// Clean, unit-amplitude field of one event over `frame` extended by `pre`
/// leading columns. Columns before the event's start time are left empty when
/// `bounded` is set (recordings); windows treat the event as ongoing.
void render_event(const NodeProfile& p, const ActivityEvent& ev, const Frame& frame, std::size_t pre,
                  bool bounded, Rng& rng, std::vector<double>& field, SynthTrace* trace) {
  const std::size_t cols = frame.cols + pre;
  const double dt = 1.0 / frame.sampling_rate;
  const double t0 = frame.time_origin - static_cast<double>(pre) * dt;
  const double sigma = p.waveform.spatial_sigma;
  const int reach = static_cast<int>(std::ceil(4.0 * sigma));
  const auto& wf = p.waveform;

  auto active = [&](double t) { return !bounded || t >= ev.start_time; };
  auto add_column = [&](std::size_t c, double center_row, double value) {
    const double local = center_row - frame.row_origin;
    const int lo = std::max(0, static_cast<int>(std::floor(local)) - reach);
    const int hi = std::min(static_cast<int>(frame.rows) - 1, static_cast<int>(std::ceil(local)) + reach);
    for (int r = lo; r <= hi; ++r) field[static_cast<std::size_t>(r) * cols + c] += gaussian(r - local, sigma) * value;
  };

  if (ev.kind == Activity::Walking) {
    const double period = 1.0 / ev.cadence;
    const double t_end = t0 + static_cast<double>(cols) * dt;
    const auto k_lo = static_cast<long long>(std::floor((t0 - 8.0 * wf.impulse_decay) / period));
    const auto k_hi = static_cast<long long>(std::floor(t_end / period));
    std::vector<double> excitation(trace ? frame.cols : 0, 0.0);
    for (long long k = k_lo; k <= k_hi; ++k) {
      const double tk = static_cast<double>(k) * period;
      if (!active(tk)) continue;
      const double row = source_row(ev, p, tk);
      if (trace && tk >= frame.time_origin && tk < frame.time_origin + frame.cols * dt) {
        trace->impulse_times.push_back(tk);
        trace->impulse_rows.push_back(row - frame.row_origin);
      }
      const auto c_first = static_cast<long long>(std::ceil((tk - t0) / dt));
      const auto c_last = std::min<long long>(static_cast<long long>(cols) - 1,
                                              c_first + static_cast<long long>(std::ceil(10.0 * wf.impulse_decay / dt)));
      for (long long c = std::max<long long>(0, c_first); c <= c_last; ++c) {
        const double tau = t0 + static_cast<double>(c) * dt - tk;
        if (tau < 0.0) continue;
        const double h = std::exp(-tau / wf.impulse_decay) * std::sin(kTwoPi * wf.impulse_freq * tau);
        add_column(static_cast<std::size_t>(c), row, h);
        if (trace && c >= static_cast<long long>(pre)) excitation[static_cast<std::size_t>(c) - pre] += h;
      }
    }
    if (trace) trace->excitation = std::move(excitation);
  } else {
    // Phase of the slow modulation is tied to the event so that it is not
    // shared across events.
    const double mod_phase = kTwoPi * std::fmod(ev.start_bin * 0.618 + ev.speed * 0.371, 1.0);
    for (std::size_t c = 0; c < cols; ++c) {
      const double t = t0 + static_cast<double>(c) * dt;
      const double jitter = rng.normal();
      if (!active(t)) continue;
      const double env = 1.0 + wf.cycling_mod_depth * std::sin(kTwoPi * wf.cycling_mod_freq * t + mod_phase);
      const double e = env * (std::sin(kTwoPi * ev.cadence * t) + wf.cycling_jitter * jitter);
      add_column(c, source_row(ev, p, t), e);
      if (trace && c >= pre) trace->excitation.push_back(e);
    }
  }
}

void render_clutter(const NodeProfile& p, const Frame& frame, std::size_t pre, Rng& rng,
                    std::vector<double>& field) {
  const std::size_t cols = frame.cols + pre;
  const double dt = 1.0 / frame.sampling_rate;
  const double duration = static_cast<double>(frame.cols) * dt;
  const double expected = p.clutter_rate * duration / (static_cast<double>(kWindowCols) / p.sampling_rate);
  const std::uint32_t count = rng.poisson(expected);
  for (std::uint32_t i = 0; i < count; ++i) {
    const double row = rng.uniform(0.0, static_cast<double>(frame.rows));
    const double onset = rng.uniform(0.0, duration);
    const double freq = rng.uniform(5.0, 60.0);
    const double amp = p.waveform.clutter_amplitude * rng.uniform(0.5, 1.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    const double decay = 0.03;
    const auto c_first = pre + static_cast<std::size_t>(onset / dt);
    const auto c_last = std::min(cols - 1, c_first + static_cast<std::size_t>(8.0 * decay / dt));
    const int lo = std::max(0, static_cast<int>(row) - 4);
    const int hi = std::min(static_cast<int>(frame.rows) - 1, static_cast<int>(row) + 4);
    for (std::size_t c = c_first; c <= c_last; ++c) {
      const double tau = static_cast<double>(c - c_first) * dt;
      const double h = amp * std::exp(-tau / decay) * std::sin(kTwoPi * freq * tau);
      for (int r = lo; r <= hi; ++r) field[static_cast<std::size_t>(r) * cols + c] += gaussian(r - row, 1.5) * h;
    }
  }
}

/// Low-pass, scale, add noise, drop the pre-roll and narrow to binary32.
std::vector<float> finish(const NodeProfile& p, const Frame& frame, std::size_t pre, std::vector<double>& signal,
                          double signal_scale, std::vector<double>& clutter, Rng& rng) {
  const std::size_t cols = frame.cols + pre;
  const double clutter_scale = p.event_scale();
  std::vector<float> out(frame.rows * frame.cols);
  for (std::size_t r = 0; r < frame.rows; ++r) {
    std::span<double> srow(signal.data() + r * cols, cols);
    std::span<double> crow(clutter.data() + r * cols, cols);
    lowpass_row(srow, p.lowpass_cutoff, frame.sampling_rate);
    lowpass_row(crow, p.lowpass_cutoff, frame.sampling_rate);
    for (std::size_t c = 0; c < frame.cols; ++c) {
      double v = srow[pre + c] * signal_scale;
      if (p.clutter_rate > 0.0) v += crow[pre + c] * clutter_scale;
      if (p.noise_std > 0.0) v += p.noise_std * rng.normal();
      out[r * frame.cols + c] = static_cast<float>(v);
    }
  }
  return out;
}

}  // namespace

float PhaseWindow::max_abs() const {
  float m = 0.0f;
  for (float v : data) m = std::max(m, std::fabs(v));
  return m;
}

bool PhaseWindow::all_finite() const {
  return std::all_of(data.begin(), data.end(), [](float v) { return std::isfinite(v); });
}

void NodeProfile::validate() const {
  require(gain > 0.0, ErrorCode::InvalidArgument, "profile " + node_id + ": gain must be > 0");
  require(attenuation > 0.0 && attenuation <= 1.0, ErrorCode::InvalidArgument,
          "profile " + node_id + ": attenuation must be in (0, 1]");
  require(noise_std >= 0.0, ErrorCode::InvalidArgument, "profile " + node_id + ": noise_std must be >= 0");
  require(lowpass_cutoff > 0.0, ErrorCode::InvalidArgument, "profile " + node_id + ": lowpass_cutoff must be > 0");
  require(sampling_rate > 0.0, ErrorCode::InvalidArgument, "profile " + node_id + ": sampling_rate must be > 0");
  require(bin_spacing > 0.0, ErrorCode::InvalidArgument, "profile " + node_id + ": bin_spacing must be > 0");
  require(clutter_rate >= 0.0, ErrorCode::InvalidArgument, "profile " + node_id + ": clutter_rate must be >= 0");
}

void ActivityEvent::validate() const {
  require(speed > 0.0, ErrorCode::InvalidArgument, "event speed must be > 0");
  require(cadence > 0.0, ErrorCode::InvalidArgument, "event cadence must be > 0");
  require(amplitude > 0.0, ErrorCode::InvalidArgument, "event amplitude must be > 0");
}

PhaseWindow synthesize_event(const NodeProfile& profile, const ActivityEvent& event, Rng& rng, WindowShape shape,
                             SynthTrace* trace) {
  profile.validate();
  event.validate();
  require(shape.rows > 0 && shape.cols > 0, ErrorCode::InvalidArgument, "window shape must be non-empty");

  const double first = source_row(event, profile, event.start_time);
  const double last =
      source_row(event, profile, event.start_time + static_cast<double>(shape.cols - 1) / profile.sampling_rate);
  require(!(last < 0.0 || first > static_cast<double>(shape.rows - 1)), ErrorCode::NotObservable,
          "event trace never enters the window");

  const Frame frame{shape.rows, shape.cols, 0.0, event.start_time, profile.sampling_rate};
  const std::size_t pre = preroll_columns(profile);
  std::vector<double> signal(shape.rows * (shape.cols + pre), 0.0);
  std::vector<double> clutter(signal.size(), 0.0);

  if (trace) {
    *trace = SynthTrace{};
    trace->source_row.resize(shape.cols);
    for (std::size_t c = 0; c < shape.cols; ++c)
      trace->source_row[c] =
          source_row(event, profile, event.start_time + static_cast<double>(c) / profile.sampling_rate);
    trace->scale = profile.event_scale() * event.amplitude;
  }

  render_event(profile, event, frame, pre, false, rng, signal, trace);
  if (profile.clutter_rate > 0.0) render_clutter(profile, frame, pre, rng, clutter);

  PhaseWindow w;
  w.rows = shape.rows;
  w.cols = shape.cols;
  w.data = finish(profile, frame, pre, signal, profile.event_scale() * event.amplitude, clutter, rng);
  w.origin_bin = 0;
  w.origin_time = event.start_time;
  w.node_id = profile.node_id;
  return w;
}

ActivityEvent draw_event(const NodeProfile& profile, Activity kind, Rng& rng, WindowShape shape) {
  const auto& b = profile.bands;
  ActivityEvent ev;
  ev.kind = kind;
  if (kind == Activity::Walking) {
    ev.speed = b.walking_speed.draw(rng);
    ev.cadence = b.step_cadence.draw(rng);
    ev.amplitude = b.walking_amplitude.draw(rng);
  } else {
    ev.speed = b.cycling_speed.draw(rng);
    ev.cadence = ev.speed / b.wheel_circumference.draw(rng);
    ev.amplitude = b.cycling_amplitude.draw(rng);
  }
  const double duration = static_cast<double>(shape.cols) / profile.sampling_rate;
  const double travel = ev.speed * duration / profile.bin_spacing;
  const double mid = rng.uniform(0.25, 0.75) * static_cast<double>(shape.rows);
  ev.start_bin = mid - 0.5 * travel;
  // Arbitrary absolute time within a day; sets the gait and wheel phase.
  ev.start_time = 36000.0 + rng.uniform(0.0, 21600.0);
  return ev;
}

std::vector<LabeledSample> synthesize_dataset(const NodeProfile& profile, const DatasetOptions& options,
                                              std::uint64_t seed) {
  profile.validate();
  require(options.n_samples >= 1, ErrorCode::InvalidArgument, "n_samples must be >= 1");
  require(options.class_balance > 0.0 && options.class_balance < 1.0, ErrorCode::InvalidArgument,
          "class_balance must be in (0, 1)");

  Rng rng(mix_seed(profile.seed, seed));
  std::vector<std::uint8_t> labels(options.n_samples);
  if (options.stratified) {
    const auto n_cycling = static_cast<std::size_t>(std::llround(options.class_balance * options.n_samples));
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i < n_cycling ? 1 : 0;
    rng.shuffle(std::span<std::uint8_t>(labels));
  } else {
    for (auto& l : labels) l = rng.uniform() < options.class_balance ? 1 : 0;
  }

  std::vector<LabeledSample> out;
  out.reserve(options.n_samples);
  for (std::size_t i = 0; i < options.n_samples; ++i) {
    Rng sample_rng = rng.fork(i);
    const auto kind = labels[i] ? Activity::Cycling : Activity::Walking;
    const ActivityEvent ev = draw_event(profile, kind, sample_rng, options.shape);
    LabeledSample s;
    s.window = synthesize_event(profile, ev, sample_rng, options.shape);
    s.label = labels[i];
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<NodeProfile> reference_profiles() {
  NodeProfile red;
  red.node_id = "Red";
  red.gain = 1.3;
  red.attenuation = 0.3;
  red.noise_std = 0.03;
  red.lowpass_cutoff = 80.0;
  red.sampling_rate = 500.0;
  red.bin_spacing = 1.1;
  red.clutter_rate = 1.0;
  red.seed = 0x5245'4400ULL;

  // Buried fibre under soft ground: long, low ringing after each footstep.
  NodeProfile ca;
  ca.node_id = "CA";
  ca.gain = 0.85;
  ca.attenuation = 0.97;
  ca.noise_std = 0.04;
  ca.lowpass_cutoff = 25.0;
  ca.sampling_rate = 750.0;
  ca.bin_spacing = 1.0;
  ca.clutter_rate = 0.5;
  ca.seed = 0x4341'0000ULL;
  ca.waveform.impulse_decay = 0.3;
  ca.waveform.impulse_freq = 10.0;

  NodeProfile cb = ca;
  cb.node_id = "CB";
  cb.gain = 0.75;
  cb.attenuation = 0.98;
  cb.noise_std = 0.045;
  cb.lowpass_cutoff = 28.0;
  cb.clutter_rate = 0.6;
  cb.seed = 0x4342'0000ULL;
  cb.waveform.impulse_decay = 0.15;
  cb.waveform.impulse_freq = 16.0;

  return {red, ca, cb};
}

NodeProfile reference_profile(const std::string& node_id) {
  for (auto& p : reference_profiles())
    if (p.node_id == node_id) return p;
  throw Error(ErrorCode::InvalidArgument, "unknown reference profile '" + node_id + "'");
}

Recording synthesize_recording(const NodeProfile& profile, std::size_t bins, std::size_t samples, double start_time,
                               const std::vector<ActivityEvent>& events, Rng& rng,
                               std::vector<RecordedEvent>* truth) {
  profile.validate();
  require(bins > 0 && samples > 0, ErrorCode::InvalidArgument, "recording must be non-empty");
  const Frame frame{bins, samples, 0.0, start_time, profile.sampling_rate};
  const std::size_t pre = preroll_columns(profile);
  std::vector<double> signal(bins * (samples + pre), 0.0);
  std::vector<double> clutter(signal.size(), 0.0);
  std::vector<double> one(signal.size());

  // Events are rendered at unit amplitude and accumulated with their own scale.
  for (const auto& ev : events) {
    ev.validate();
    std::fill(one.begin(), one.end(), 0.0);
    render_event(profile, ev, frame, pre, true, rng, one, nullptr);
    for (std::size_t i = 0; i < one.size(); ++i) signal[i] += ev.amplitude * one[i];
    if (truth) {
      RecordedEvent rec{ev, {}};
      for (std::size_t c = 0; c < samples; ++c) {
        const double t = start_time + static_cast<double>(c) / profile.sampling_rate;
        if (t < ev.start_time) continue;
        const double pos = ev.start_bin * profile.bin_spacing + ev.speed * (t - ev.start_time);
        if (pos > static_cast<double>(bins - 1) * profile.bin_spacing) break;
        rec.track.push_back({t, pos});
      }
      truth->push_back(std::move(rec));
    }
  }
  if (profile.clutter_rate > 0.0) render_clutter(profile, frame, pre, rng, clutter);

  Recording out;
  out.bins = bins;
  out.samples = samples;
  out.data = finish(profile, frame, pre, signal, profile.event_scale(), clutter, rng);
  out.start_time = start_time;
  out.sampling_rate = profile.sampling_rate;
  out.bin_spacing = profile.bin_spacing;
  out.node_id = profile.node_id;
  return out;
}

}  // namespace das
