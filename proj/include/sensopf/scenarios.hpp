#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sensopf/training.hpp"

namespace sensopf {

/// Minute-resolution day of per-bus demand and solar output, pu.
struct DayProfiles {
    static constexpr int kMinutes = 1440;

    Matrix load_p;   // L x 1440
    Matrix load_q;   // L x 1440
    Matrix solar_p;  // I x 1440
    std::string provenance;

    void validate(const Feeder& feeder) const;
};

/// Shape family for the synthetic generator: demand is a base level with
/// morning/evening bumps, solar a clipped sine over the daylight window,
/// both modulated by smooth (low-pass) multiplicative noise.
struct ProfileGenConfig {
    double base_load = 0.03;       // mean per-load level, pu
    double load_spread = 0.25;     // per-bus level multiplier in [1-s, 1+s]
    double morning_peak_minute = 8.0 * 60.0;
    double morning_amp = 0.35;
    double morning_width = 110.0;  // minutes
    double evening_peak_minute = 19.0 * 60.0;
    double evening_amp = 0.85;
    double evening_width = 140.0;
    double load_noise = 0.04;      // multiplicative noise stddev
    double solar_start_minute = 6.0 * 60.0;
    double solar_end_minute = 20.0 * 60.0;
    double solar_noise = 0.10;
    double noise_correlation = 0.985;  // per-minute low-pass pole
    double ramp_limit = 0.02;          // max per-minute step, pu
    double power_factor = 0.9;         // provisional reactive loads

    void validate() const;
};

DayProfiles generate_profiles(const Feeder& feeder, const ProfileGenConfig& config, std::uint64_t seed);

struct CalibConfig {
    double nominal_total_load = 1.0;  // duration-curve anchor, pu
    double load_percentile = 0.97;    // percentile pinned to the anchor
    double solar_penetration = 0.75;  // solar energy / load energy over the day
    double power_factor = 0.9;        // used where power_factors is empty
    Vector power_factors;             // per load bus, lagging
};

/// Rescales demand so the duration curve's chosen percentile hits the nominal
/// total, derives reactive loads from power factors, and scales solar to the
/// requested energy penetration.
DayProfiles calibrate_profiles(const DayProfiles& profiles, const Feeder& feeder, const CalibConfig& calib);

/// OPF parameter vector θ = [p; q_ℓ] at one minute, with
/// p = Fi p_solar - Fl p_load.
Vector theta_at(const DayProfiles& profiles, const Feeder& feeder, int minute);

/// Minute selection: an hourly window or the (possibly truncated) full day,
/// sampled on a fixed grid or as a seeded random fraction. Selected minutes
/// train; the remaining eligible minutes test.
struct DatasetSpec {
    enum class Rule { EveryKMinutes, RandomFraction };

    Rule rule = Rule::EveryKMinutes;
    int every_k = 15;
    double fraction = 0.05;
    std::uint64_t sample_seed = 0;
    int hour = -1;                // 0..23, or -1 for the full day
    int exclude_before_hour = 0;  // full-day mode only

    void validate() const;
    std::vector<int> eligible_minutes() const;
    std::pair<std::vector<int>, std::vector<int>> split() const;  // (train, test)
};

struct DatasetSummary {
    int total = 0;
    int train_size = 0;
    int test_size = 0;
    int no_active = 0;         // no constraint active
    int with_active = 0;
    int degenerate = 0;        // weakly-active dual, value-only samples
    int licq_violations = 0;   // rank-deficient active rows
};

struct Dataset {
    TrainingSet train;  // records with sensitivities
    TrainingSet test;   // value-only (θ, x) records
    std::vector<int> train_minutes, test_minutes;
    DatasetSummary summary;
};

/// Solves one OPF per selected minute and labels it; training minutes carry
/// Jacobians (unless degenerate), test minutes are value-only. Throws
/// InfeasibleQp naming the offending minute.
Dataset build_dataset(const MpqpInstance& inst, const DayProfiles& profiles, const Feeder& feeder,
                      const DatasetSpec& spec, const SensitivityOptions& opts = {}, int jobs = 1);

DatasetSummary recount_summary(const Dataset& dataset);

std::string summary_to_json(const DatasetSummary& summary);
DatasetSummary summary_from_json(const std::string& text);

/// Writes prefix.train.jsonl, prefix.test.jsonl, prefix.summary.json.
void save_dataset(const Dataset& dataset, const std::string& prefix);

/// Profiles CSV: one header row naming the profiles (p_<bus>, q_<bus>,
/// s_<bus>), then 1440 rows of pu values. Missing q_ columns default to zero.
void save_profiles_csv(const DayProfiles& profiles, const Feeder& feeder, const std::string& path);
DayProfiles load_profiles_csv(const Feeder& feeder, const std::string& path);

}  // namespace sensopf
