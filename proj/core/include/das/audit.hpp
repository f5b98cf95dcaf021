#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "das/sample.hpp"

namespace das {

enum class SplitRole : std::uint8_t { Train = 0, Test = 1 };
enum class Phase : std::uint8_t { Idle = 0, Training = 1, FineTuning = 2, Evaluation = 3 };

/// Counts sample reads by split role and by the phase active at read time.
/// The harness switches phases; SampleSet reports every element access here.
class AccessLedger {
 public:
  void record(SplitRole role) { ++counts_[index(role, phase_)]; }

  Phase phase() const { return phase_; }

  std::uint64_t reads(SplitRole role, Phase phase) const { return counts_[index(role, phase)]; }

  /// Test-split reads made while a model was being fitted.
  std::uint64_t leaks() const {
    return reads(SplitRole::Test, Phase::Training) + reads(SplitRole::Test, Phase::FineTuning);
  }

  void merge(const AccessLedger& other) {
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  }

  /// RAII phase switch; restores the previous phase on exit.
  class Scope {
   public:
    Scope(AccessLedger* ledger, Phase phase) : ledger_(ledger) {
      if (ledger_) {
        previous_ = ledger_->phase_;
        ledger_->phase_ = phase;
      }
    }
    ~Scope() {
      if (ledger_) ledger_->phase_ = previous_;
    }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    AccessLedger* ledger_;
    Phase previous_ = Phase::Idle;
  };

 private:
  static std::size_t index(SplitRole role, Phase phase) {
    return static_cast<std::size_t>(role) * 4 + static_cast<std::size_t>(phase);
  }

  Phase phase_ = Phase::Idle;
  std::array<std::uint64_t, 8> counts_{};
};

/// Non-owning, optionally audited view over labeled samples. Element access
/// goes through operator[], which reports to the attached ledger. A view may
/// carry an index list selecting a subset of the underlying samples.
class SampleSet {
 public:
  SampleSet() = default;
  SampleSet(std::span<const LabeledSample> samples, SplitRole role = SplitRole::Train,
            AccessLedger* ledger = nullptr)
      : samples_(samples), role_(role), ledger_(ledger) {}
  SampleSet(const std::vector<LabeledSample>& samples)  // NOLINT(google-explicit-constructor)
      : samples_(samples) {}

  std::size_t size() const { return selection_ ? selection_->size() : samples_.size(); }
  bool empty() const { return size() == 0; }

  const LabeledSample& operator[](std::size_t i) const {
    if (ledger_) ledger_->record(role_);
    return samples_[selection_ ? (*selection_)[i] : i];
  }

  /// Subset view; `indices` are positions in this view.
  SampleSet select(std::vector<std::size_t> indices) const {
    SampleSet out = *this;
    if (selection_)
      for (auto& i : indices) i = (*selection_)[i];
    out.selection_ = std::make_shared<const std::vector<std::size_t>>(std::move(indices));
    return out;
  }

  SplitRole role() const { return role_; }
  AccessLedger* ledger() const { return ledger_; }

 private:
  std::span<const LabeledSample> samples_;
  std::shared_ptr<const std::vector<std::size_t>> selection_;
  SplitRole role_ = SplitRole::Train;
  AccessLedger* ledger_ = nullptr;
};

}  // namespace das
