#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>

#include "das/error.hpp"
#include "das/synth.hpp"

using namespace das;

namespace {

NodeProfile clean(NodeProfile p) {
  p.noise_std = 0.0;
  p.clutter_rate = 0.0;
  return p;
}

ActivityEvent walking(double cadence = 2.0) {
  ActivityEvent ev;
  ev.kind = Activity::Walking;
  ev.speed = 1.4;
  ev.cadence = cadence;
  ev.amplitude = 1.0;
  ev.start_bin = 20.0;
  ev.start_time = 100.0;
  return ev;
}

ActivityEvent cycling(double speed = 5.0, double circumference = 2.1) {
  ActivityEvent ev;
  ev.kind = Activity::Cycling;
  ev.speed = speed;
  ev.cadence = speed / circumference;
  ev.amplitude = 1.0;
  ev.start_bin = 10.0;
  ev.start_time = 200.0;
  return ev;
}

// Frequency of the largest magnitude of the zero-padded DFT, DC removed.
double dominant_frequency(const std::vector<double>& x, double fs) {
  const std::size_t n = 16384;
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double best = 0.0;
  std::size_t best_k = 1;
  std::vector<double> mag(n / 2);
  for (std::size_t k = 1; k < n / 2; ++k) {
    const double f = static_cast<double>(k) * fs / static_cast<double>(n);
    if (f > 100.0) break;
    std::complex<double> acc{};
    for (std::size_t t = 0; t < x.size(); ++t)
      acc += (x[t] - mean) * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k * t) / n);
    mag[k] = std::abs(acc);
    if (mag[k] > best) {
      best = mag[k];
      best_k = k;
    }
  }
  return static_cast<double>(best_k) * fs / static_cast<double>(n);
}

}  // namespace

TEST(Synth, SameSeedsGiveIdenticalWindows) {
  const auto p = reference_profile("CA");
  Rng a(7), b(7);
  const auto w1 = synthesize_event(p, cycling(), a);
  const auto w2 = synthesize_event(p, cycling(), b);
  EXPECT_EQ(w1.data, w2.data);
  EXPECT_EQ(w1.rows, kWindowRows);
  EXPECT_EQ(w1.cols, kWindowCols);
  EXPECT_TRUE(w1.all_finite());
}

TEST(Synth, DatasetIsDeterministicAndStratified) {
  const auto p = reference_profile("Red");
  DatasetOptions opt;
  opt.n_samples = 100;
  const auto d1 = synthesize_dataset(p, opt, 3);
  const auto d2 = synthesize_dataset(p, opt, 3);
  ASSERT_EQ(d1.size(), 100u);
  std::size_t cycling_count = 0;
  for (std::size_t i = 0; i < d1.size(); ++i) {
    EXPECT_EQ(d1[i].label, d2[i].label);
    EXPECT_EQ(d1[i].window.data, d2[i].window.data);
    cycling_count += d1[i].label;
  }
  EXPECT_EQ(cycling_count, 50u);
  const auto d3 = synthesize_dataset(p, opt, 4);
  EXPECT_NE(d1[0].window.data, d3[0].window.data);
}

TEST(Synth, OutputIsLinearInGainAttenuationAmplitude) {
  auto p = clean(reference_profile("Red"));
  auto q = p;
  q.gain = 2.0 * p.gain;
  for (const auto& ev : {walking(), cycling()}) {
    Rng a(11), b(11);
    const auto w1 = synthesize_event(p, ev, a);
    const auto w2 = synthesize_event(q, ev, b);
    EXPECT_FLOAT_EQ(w2.max_abs(), 2.0f * w1.max_abs());
    for (std::size_t i = 0; i < w1.data.size(); i += 97) EXPECT_FLOAT_EQ(w2.data[i], 2.0f * w1.data[i]);
  }
  // Amplitude and attenuation enter through the same product.
  auto ev = walking();
  ev.amplitude = 0.5;
  auto r = p;
  r.attenuation = 1.0;
  r.gain = p.gain * p.attenuation;
  Rng a(5), b(5);
  const auto w1 = synthesize_event(p, walking(), a);
  const auto w2 = synthesize_event(r, ev, b);
  EXPECT_NEAR(w2.max_abs(), 0.5 * w1.max_abs(), 1e-6);
}

TEST(Synth, WalkingHasOneImpulseGroupPerStep) {
  const auto p = clean(reference_profile("Red"));
  Rng rng(1);
  SynthTrace trace;
  synthesize_event(p, walking(2.0), rng, {}, &trace);
  // Steps at 0, 0.5 and 1.0 s fall inside the 1.024 s window.
  EXPECT_EQ(trace.impulse_times.size(), 3u);
  for (std::size_t i = 1; i < trace.impulse_times.size(); ++i)
    EXPECT_NEAR(trace.impulse_times[i] - trace.impulse_times[i - 1], 0.5, 1e-12);
}

// Walking energy arrives as damped impulses ringing at the impulse frequency;
// the step cadence is the repetition rate of their envelope. The envelope is
// the mean |x| over one ringing period. Long windows give the resolution.
static std::vector<double> envelope(const std::vector<double>& x, double fs, double ring_freq) {
  const auto half = static_cast<std::size_t>(std::lround(0.5 * fs / ring_freq));
  std::vector<double> out(x.size(), 0.0);
  for (std::size_t t = 0; t < x.size(); ++t) {
    const std::size_t lo = t >= half ? t - half : 0, hi = std::min(x.size(), t + half + 1);
    for (std::size_t k = lo; k < hi; ++k) out[t] += std::fabs(x[k]);
    out[t] /= static_cast<double>(hi - lo);
  }
  return out;
}

TEST(Synth, DominantFrequencyMatchesCadence) {
  const WindowShape tall{kWindowRows, 4096};
  for (const auto& base : reference_profiles()) {
    const auto p = clean(base);
    for (double cadence : {1.6, 2.0, 2.4}) {
      Rng rng(2);
      SynthTrace trace;
      auto ev = walking(cadence);
      ev.speed = 0.1;  // stays inside the frame for the whole window
      synthesize_event(p, ev, rng, tall, &trace);
      const auto env = envelope(trace.excitation, p.sampling_rate, p.waveform.impulse_freq);
      const double f = dominant_frequency(env, p.sampling_rate);
      EXPECT_NEAR(f / cadence, 1.0, 0.10) << p.node_id << " walking cadence " << cadence;
    }
    for (double speed : {3.0, 5.0, 7.0}) {
      Rng rng(3);
      SynthTrace trace;
      const auto ev = cycling(speed);
      synthesize_event(p, ev, rng, tall, &trace);
      const double f = dominant_frequency(trace.excitation, p.sampling_rate);
      EXPECT_NEAR(f / ev.cadence, 1.0, 0.10) << p.node_id << " cycling speed " << speed;
    }
  }
}

TEST(Synth, TraceAdvancesAtSpeedOverBinSpacing) {
  // Smooth cycling source with a carrier period of exactly 20 columns: energy
  // averaged over one period follows the Gaussian spatial footprint, which
  // peaks in each row when the source crosses it.
  auto p = clean(reference_profile("CA"));
  p.waveform.cycling_jitter = 0.0;
  p.waveform.cycling_mod_depth = 0.0;
  ActivityEvent ev = cycling(3.0);
  ev.cadence = p.sampling_rate / 20.0;
  ev.start_bin = 2.0;
  Rng rng(4);
  SynthTrace trace;
  const auto w = synthesize_event(p, ev, rng, {kWindowRows, 4096}, &trace);
  const double cols_per_row = p.bin_spacing / ev.speed * p.sampling_rate;
  const std::size_t period = 20;
  std::vector<double> peaks;
  for (std::size_t r = 6; r <= 12; ++r) {
    double best = -1.0;
    std::size_t arg = 0;
    for (std::size_t c = 0; c + period <= w.cols; ++c) {
      double e = 0.0;
      for (std::size_t k = 0; k < period; ++k) e += double(w.at(r, c + k)) * w.at(r, c + k);
      if (e > best) {
        best = e;
        arg = c;
      }
    }
    peaks.push_back(static_cast<double>(arg));
  }
  for (std::size_t i = 1; i < peaks.size(); ++i) EXPECT_NEAR(peaks[i] - peaks[i - 1], cols_per_row, 1.0);
  EXPECT_NEAR(trace.source_row[250] - trace.source_row[0], 250.0 / cols_per_row, 1e-9);
}

TEST(Synth, UnobservableEventIsRejected) {
  const auto p = reference_profile("Red");
  auto ev = walking();
  ev.start_bin = 500.0;
  Rng rng(1);
  try {
    synthesize_event(p, ev, rng);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NotObservable);
  }
}

TEST(Synth, InvalidProfilesAndEventsAreRejected) {
  auto p = reference_profile("Red");
  p.attenuation = 1.5;
  EXPECT_THROW(p.validate(), Error);
  p = reference_profile("Red");
  p.gain = 0.0;
  EXPECT_THROW(p.validate(), Error);
  auto ev = walking();
  ev.speed = 0.0;
  EXPECT_THROW(ev.validate(), Error);
  DatasetOptions opt;
  opt.class_balance = 1.0;
  EXPECT_THROW(synthesize_dataset(reference_profile("CA"), opt, 1), Error);
}

TEST(Synth, ReferenceProfilesSampling) {
  const auto ps = reference_profiles();
  ASSERT_EQ(ps.size(), 3u);
  EXPECT_EQ(ps[0].node_id, "Red");
  EXPECT_EQ(ps[1].node_id, "CA");
  EXPECT_EQ(ps[2].node_id, "CB");
  EXPECT_EQ(ps[0].sampling_rate, 500.0);
  EXPECT_EQ(ps[1].sampling_rate, 750.0);
  EXPECT_EQ(ps[2].sampling_rate, 750.0);
  EXPECT_GT(ps[0].gain, ps[1].gain);
  EXPECT_LT(ps[0].attenuation, ps[1].attenuation);
  EXPECT_NEAR(ps[1].attenuation, 1.0, 0.05);
  EXPECT_LT(std::fabs(ps[1].gain - ps[2].gain), std::fabs(ps[1].gain - ps[0].gain));
}

TEST(Synth, CellarheadPairIsCloserThanRedOnEveryParameter) {
  const auto ps = reference_profiles();
  const auto& red = ps[0];
  const auto& ca = ps[1];
  const auto& cb = ps[2];
  auto rel = [](double a, double b) { return std::fabs(a - b) / std::max(std::fabs(a), std::fabs(b)); };
  struct Field {
    const char* name;
    double NodeProfile::*member;
  };
  const Field fields[] = {{"gain", &NodeProfile::gain},
                          {"attenuation", &NodeProfile::attenuation},
                          {"noise_std", &NodeProfile::noise_std},
                          {"lowpass_cutoff", &NodeProfile::lowpass_cutoff},
                          {"sampling_rate", &NodeProfile::sampling_rate},
                          {"bin_spacing", &NodeProfile::bin_spacing},
                          {"clutter_rate", &NodeProfile::clutter_rate}};
  for (const auto& f : fields) {
    const double pair = rel(ca.*f.member, cb.*f.member);
    EXPECT_LT(pair, rel(ca.*f.member, red.*f.member)) << f.name;
    EXPECT_LT(pair, rel(cb.*f.member, red.*f.member)) << f.name;
  }
  const double WaveformModel::*wave[] = {&WaveformModel::impulse_decay, &WaveformModel::impulse_freq};
  for (auto m : wave) {
    const double pair = rel(ca.waveform.*m, cb.waveform.*m);
    EXPECT_LT(pair, rel(ca.waveform.*m, red.waveform.*m));
    EXPECT_LT(pair, rel(cb.waveform.*m, red.waveform.*m));
  }
}

TEST(Synth, MaximumAmplitudeContrast) {
  DatasetOptions opt;
  opt.n_samples = 60;
  auto max_cycling = [&](const NodeProfile& p) {
    float m = 0.0f;
    for (const auto& s : synthesize_dataset(p, opt, 1))
      if (s.label == 1) m = std::max(m, s.window.max_abs());
    return m;
  };
  const auto ps = reference_profiles();
  EXPECT_LT(max_cycling(ps[0]), 1.0f);
  const float ca = max_cycling(ps[1]);
  EXPECT_GT(ca, 1.5f);
  EXPECT_LT(ca, 2.5f);
}

TEST(Synth, RecordingCarriesGroundTruthTrack) {
  const auto p = clean(reference_profile("Red"));
  auto ev = walking();
  ev.start_bin = 30.0;
  ev.start_time = 10.5;
  Rng rng(9);
  std::vector<RecordedEvent> truth;
  const auto rec = synthesize_recording(p, 128, 2000, 10.0, {ev}, rng, &truth);
  ASSERT_EQ(truth.size(), 1u);
  ASSERT_FALSE(truth[0].track.empty());
  EXPECT_NEAR(truth[0].track.front().time, 10.5, 1.0 / p.sampling_rate);
  EXPECT_NEAR(truth[0].track.front().position, 30.0 * p.bin_spacing, 1.4 / p.sampling_rate + 1e-9);
  // Nothing before the event starts.
  for (std::size_t b = 0; b < rec.bins; ++b)
    for (std::size_t t = 0; t < 240; ++t) ASSERT_EQ(rec.at(b, t), 0.0f);
}
