#include "sensopf/scenarios.hpp"

#include <algorithm>
#include <cmath>
#include <atomic>
#include <fstream>
#include <functional>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "sensopf/rng.hpp"

namespace sensopf {

namespace {

void rate_limit(Matrix& profiles, int row, double ramp) {
    for (int t = 1; t < profiles.cols(); ++t) {
        const double lo = profiles(row, t - 1) - ramp;
        const double hi = profiles(row, t - 1) + ramp;
        profiles(row, t) = std::min(std::max(profiles(row, t), lo), hi);
    }
}

double gaussian_bump(double t, double center, double width) {
    const double u = (t - center) / width;
    return std::exp(-0.5 * u * u);
}

void run_parallel(int n, int jobs, const std::function<void(int)>& fn) {
    if (jobs <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::exception_ptr first_error;
    std::mutex error_mutex;
    std::atomic<int> next{0};
    auto worker = [&]() {
        for (;;) {
            const int i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> threads;
    const int count = std::min(jobs, n);
    threads.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace

void DayProfiles::validate(const Feeder& feeder) const {
    if (load_p.rows() != feeder.load_count() || load_q.rows() != feeder.load_count() ||
        solar_p.rows() != feeder.inverter_count())
        throw DimensionMismatch("profiles do not match the feeder's loads/inverters");
    if (load_p.cols() != kMinutes || load_q.cols() != kMinutes || solar_p.cols() != kMinutes)
        throw DimensionMismatch("profiles must cover 1440 minutes");
    if (load_p.minCoeff() < 0.0 || load_q.minCoeff() < 0.0 || solar_p.minCoeff() < 0.0)
        throw BadConfig("profiles must be nonnegative");
}

void ProfileGenConfig::validate() const {
    if (!(base_load > 0.0)) throw BadConfig("base_load must be positive");
    if (load_spread < 0.0 || load_spread >= 1.0) throw BadConfig("load_spread must be in [0, 1)");
    if (morning_amp < 0.0 || evening_amp < 0.0) throw BadConfig("bump amplitudes must be nonnegative");
    if (!(morning_width > 0.0) || !(evening_width > 0.0)) throw BadConfig("bump widths must be positive");
    if (load_noise < 0.0 || solar_noise < 0.0) throw BadConfig("noise amplitudes must be nonnegative");
    if (noise_correlation < 0.0 || noise_correlation >= 1.0) throw BadConfig("noise correlation must be in [0, 1)");
    if (!(ramp_limit > 0.0)) throw BadConfig("ramp limit must be positive");
    if (solar_start_minute < 0.0 || solar_end_minute > DayProfiles::kMinutes || solar_start_minute >= solar_end_minute)
        throw BadConfig("daylight window is invalid");
    if (!(power_factor > 0.0) || power_factor > 1.0) throw BadConfig("power factor must be in (0, 1]");
}

DayProfiles generate_profiles(const Feeder& feeder, const ProfileGenConfig& config, std::uint64_t seed) {
    config.validate();
    feeder.validate();
    const int minutes = DayProfiles::kMinutes;
    const int nl = feeder.load_count();
    const int ni = feeder.inverter_count();

    DayProfiles profiles;
    profiles.provenance = "synthetic(seed=" + std::to_string(seed) + ")";
    profiles.load_p.resize(nl, minutes);
    profiles.load_q.resize(nl, minutes);
    profiles.solar_p.resize(ni, minutes);

    Rng rng(seed);
    const double ou_step = std::sqrt(1.0 - config.noise_correlation * config.noise_correlation);
    const double tan_phi = std::tan(std::acos(config.power_factor));

    for (int b = 0; b < nl; ++b) {
        const double level = config.base_load * (1.0 + config.load_spread * (2.0 * rng.uniform() - 1.0));
        double ou = rng.normal();
        for (int t = 0; t < minutes; ++t) {
            const double shape = 1.0 +
                                 config.morning_amp * gaussian_bump(t, config.morning_peak_minute, config.morning_width) +
                                 config.evening_amp * gaussian_bump(t, config.evening_peak_minute, config.evening_width);
            profiles.load_p(b, t) = std::max(0.0, level * shape * (1.0 + config.load_noise * ou));
            ou = config.noise_correlation * ou + ou_step * rng.normal();
        }
        rate_limit(profiles.load_p, b, config.ramp_limit);
        profiles.load_q.row(b) = profiles.load_p.row(b) * tan_phi;
    }

    const double window = config.solar_end_minute - config.solar_start_minute;
    for (int i = 0; i < ni; ++i) {
        double ou = rng.normal();
        for (int t = 0; t < minutes; ++t) {
            double value = 0.0;
            if (t > config.solar_start_minute && t < config.solar_end_minute) {
                const double phase = (t - config.solar_start_minute) / window;
                const double shape = std::pow(std::sin(3.14159265358979323846 * phase), 1.3);
                value = std::max(0.0, shape * (1.0 + config.solar_noise * ou));
            }
            profiles.solar_p(i, t) = value;
            ou = config.noise_correlation * ou + ou_step * rng.normal();
        }
        rate_limit(profiles.solar_p, i, config.ramp_limit);
    }
    return profiles;
}

DayProfiles calibrate_profiles(const DayProfiles& profiles, const Feeder& feeder, const CalibConfig& calib) {
    profiles.validate(feeder);
    if (!(calib.load_percentile > 0.0) || calib.load_percentile > 1.0)
        throw BadConfig("load percentile must be in (0, 1]");
    if (calib.solar_penetration < 0.0) throw BadConfig("solar penetration must be nonnegative");
    if (calib.power_factors.size() != 0 && calib.power_factors.size() != feeder.load_count())
        throw BadConfig("one power factor per load bus required");

    DayProfiles out = profiles;
    const int minutes = DayProfiles::kMinutes;

    // Anchor the duration curve: scale demand so its chosen percentile equals
    // the nominal total load.
    std::vector<double> totals(static_cast<std::size_t>(minutes));
    for (int t = 0; t < minutes; ++t) totals[static_cast<std::size_t>(t)] = out.load_p.col(t).sum();
    std::vector<double> sorted = totals;
    std::sort(sorted.begin(), sorted.end());
    const int idx = std::max(0, static_cast<int>(std::ceil(calib.load_percentile * minutes)) - 1);
    const double anchor = sorted[static_cast<std::size_t>(idx)];
    if (!(anchor > 0.0)) throw DegenerateProfile("total load is zero; cannot calibrate");
    const double load_scale = calib.nominal_total_load / anchor;
    out.load_p *= load_scale;

    for (int b = 0; b < feeder.load_count(); ++b) {
        const double pf = calib.power_factors.size() > 0 ? calib.power_factors[b] : calib.power_factor;
        if (!(pf > 0.0) || pf > 1.0) throw BadConfig("power factors must be in (0, 1]");
        out.load_q.row(b) = out.load_p.row(b) * std::tan(std::acos(pf));
    }

    const double load_energy = out.load_p.sum();
    const double solar_energy = profiles.solar_p.sum();
    if (calib.solar_penetration == 0.0) {
        out.solar_p.setZero();
    } else {
        if (!(solar_energy > 0.0)) throw DegenerateProfile("solar profiles are zero; cannot meet penetration");
        out.solar_p = profiles.solar_p * (calib.solar_penetration * load_energy / solar_energy);
    }
    return out;
}

Vector theta_at(const DayProfiles& profiles, const Feeder& feeder, int minute) {
    if (minute < 0 || minute >= DayProfiles::kMinutes) throw IndexOutOfRange("minute must be in 0..1439");
    profiles.validate(feeder);
    const int n = feeder.bus_count;
    Vector theta = Vector::Zero(n + feeder.load_count());
    for (int i = 0; i < feeder.inverter_count(); ++i)
        theta[feeder.inverter_buses[i] - 1] += profiles.solar_p(i, minute);
    for (int l = 0; l < feeder.load_count(); ++l)
        theta[feeder.load_buses[l] - 1] -= profiles.load_p(l, minute);
    theta.tail(feeder.load_count()) = profiles.load_q.col(minute);
    return theta;
}

void DatasetSpec::validate() const {
    if (hour < -1 || hour > 23) throw BadConfig("hour must be 0..23 or -1 for the full day");
    if (exclude_before_hour < 0 || exclude_before_hour > 23) throw BadConfig("exclude_before_hour must be 0..23");
    if (rule == Rule::EveryKMinutes && every_k < 1) throw BadConfig("every_k must be at least 1");
    if (rule == Rule::RandomFraction && (fraction <= 0.0 || fraction > 1.0))
        throw BadConfig("fraction must be in (0, 1]");
}

std::vector<int> DatasetSpec::eligible_minutes() const {
    validate();
    int begin = 0, end = DayProfiles::kMinutes;
    if (hour >= 0) {
        begin = hour * 60;
        end = begin + 60;
    } else {
        begin = exclude_before_hour * 60;
    }
    std::vector<int> minutes;
    minutes.reserve(static_cast<std::size_t>(end - begin));
    for (int t = begin; t < end; ++t) minutes.push_back(t);
    return minutes;
}

std::pair<std::vector<int>, std::vector<int>> DatasetSpec::split() const {
    const std::vector<int> eligible = eligible_minutes();
    std::vector<int> train;
    if (rule == Rule::EveryKMinutes) {
        for (std::size_t i = 0; i < eligible.size(); i += static_cast<std::size_t>(every_k))
            train.push_back(eligible[i]);
    } else {
        const int want = std::max(1, static_cast<int>(std::lround(fraction * static_cast<double>(eligible.size()))));
        std::vector<int> shuffled = eligible;
        Rng rng(sample_seed);
        for (std::size_t i = shuffled.size(); i > 1; --i)
            std::swap(shuffled[i - 1], shuffled[rng.below(i)]);
        train.assign(shuffled.begin(), shuffled.begin() + std::min<std::size_t>(static_cast<std::size_t>(want), shuffled.size()));
        std::sort(train.begin(), train.end());
    }
    std::vector<int> test;
    test.reserve(eligible.size() - train.size());
    std::size_t ti = 0;
    for (int t : eligible) {
        if (ti < train.size() && train[ti] == t) { ++ti; continue; }
        test.push_back(t);
    }
    if (train.empty()) throw BadConfig("training split is empty");
    return {train, test};
}

Dataset build_dataset(const MpqpInstance& inst, const DayProfiles& profiles, const Feeder& feeder,
                      const DatasetSpec& spec, const SensitivityOptions& opts, int jobs) {
    profiles.validate(feeder);
    auto [train_minutes, test_minutes] = spec.split();

    Dataset ds;
    ds.train_minutes = train_minutes;
    ds.test_minutes = test_minutes;

    auto build_split = [&](const std::vector<int>& minutes, bool keep_jacobian) {
        std::vector<SensitivityRecord> records(minutes.size());
        run_parallel(static_cast<int>(minutes.size()), jobs, [&](int i) {
            const int minute = minutes[static_cast<std::size_t>(i)];
            try {
                records[static_cast<std::size_t>(i)] = build_record(inst, theta_at(profiles, feeder, minute), opts);
            } catch (const InfeasibleQp& err) {
                throw InfeasibleQp(std::string(err.what()) + " (minute " + std::to_string(minute) + ")");
            }
        });
        if (!keep_jacobian)
            for (auto& rec : records) rec.jacobian.reset();
        return records;
    };

    ds.train.records = build_split(train_minutes, true);
    ds.test.records = build_split(test_minutes, false);

    auto count = [&](const TrainingSet& set) {
        for (const SensitivityRecord& rec : set.records) {
            ++ds.summary.total;
            if (rec.active_set.empty()) ++ds.summary.no_active;
            else ++ds.summary.with_active;
            if (rec.degenerate) ++ds.summary.degenerate;
            if (!rec.licq_holds) ++ds.summary.licq_violations;
        }
    };
    count(ds.train);
    count(ds.test);
    ds.summary.train_size = ds.train.size();
    ds.summary.test_size = ds.test.size();
    return ds;
}

DatasetSummary recount_summary(const Dataset& dataset) {
    DatasetSummary s;
    auto tally = [&s](const TrainingSet& set) {
        for (const SensitivityRecord& rec : set.records) {
            ++s.total;
            if (rec.active_set.empty()) ++s.no_active;
            else ++s.with_active;
            if (rec.degenerate) ++s.degenerate;
            if (!rec.licq_holds) ++s.licq_violations;
        }
    };
    tally(dataset.train);
    tally(dataset.test);
    s.train_size = dataset.train.size();
    s.test_size = dataset.test.size();
    return s;
}

std::string summary_to_json(const DatasetSummary& summary) {
    nlohmann::json j;
    j["format_version"] = 1;
    j["total"] = summary.total;
    j["train_size"] = summary.train_size;
    j["test_size"] = summary.test_size;
    j["no_active"] = summary.no_active;
    j["with_active"] = summary.with_active;
    j["degenerate"] = summary.degenerate;
    j["licq_violations"] = summary.licq_violations;
    return j.dump(2);
}

DatasetSummary summary_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded()) throw SchemaError("summary is not valid JSON");
    DatasetSummary s;
    s.total = j.at("total").get<int>();
    s.train_size = j.at("train_size").get<int>();
    s.test_size = j.at("test_size").get<int>();
    s.no_active = j.at("no_active").get<int>();
    s.with_active = j.at("with_active").get<int>();
    s.degenerate = j.at("degenerate").get<int>();
    s.licq_violations = j.at("licq_violations").get<int>();
    return s;
}

void save_dataset(const Dataset& dataset, const std::string& prefix) {
    save_records(dataset.train.records, prefix + ".train.jsonl");
    save_records(dataset.test.records, prefix + ".test.jsonl");
    std::ofstream out(prefix + ".summary.json");
    if (!out) throw SchemaError("cannot write summary file");
    out << summary_to_json(dataset.summary) << "\n";
}

namespace {

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void save_profiles_csv(const DayProfiles& profiles, const Feeder& feeder, const std::string& path) {
    profiles.validate(feeder);
    std::ofstream out(path);
    if (!out) throw SchemaError("cannot write profiles file: " + path);
    std::vector<std::string> header;
    for (int l = 0; l < feeder.load_count(); ++l) header.push_back("p_" + feeder.bus_id(feeder.load_buses[l]));
    for (int l = 0; l < feeder.load_count(); ++l) header.push_back("q_" + feeder.bus_id(feeder.load_buses[l]));
    for (int i = 0; i < feeder.inverter_count(); ++i) header.push_back("s_" + feeder.bus_id(feeder.inverter_buses[i]));
    for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
    out << "\n";
    for (int t = 0; t < DayProfiles::kMinutes; ++t) {
        bool first = true;
        for (int l = 0; l < feeder.load_count(); ++l, first = false) out << (first ? "" : ",") << format_double(profiles.load_p(l, t));
        for (int l = 0; l < feeder.load_count(); ++l) out << "," << format_double(profiles.load_q(l, t));
        for (int i = 0; i < feeder.inverter_count(); ++i) out << "," << format_double(profiles.solar_p(i, t));
        out << "\n";
    }
}

DayProfiles load_profiles_csv(const Feeder& feeder, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError("cannot open profiles file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw SchemaError("profiles file is empty");

    std::vector<std::string> names;
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) names.push_back(cell);
    }
    DayProfiles profiles;
    profiles.provenance = "file:" + path;
    profiles.load_p = Matrix::Zero(feeder.load_count(), DayProfiles::kMinutes);
    profiles.load_q = Matrix::Zero(feeder.load_count(), DayProfiles::kMinutes);
    profiles.solar_p = Matrix::Zero(feeder.inverter_count(), DayProfiles::kMinutes);

    // column -> (matrix, row)
    std::vector<std::pair<Matrix*, int>> targets(names.size(), {nullptr, -1});
    auto find_load = [&](const std::string& id) {
        for (int l = 0; l < feeder.load_count(); ++l)
            if (feeder.bus_id(feeder.load_buses[l]) == id) return l;
        return -1;
    };
    auto find_inverter = [&](const std::string& id) {
        for (int i = 0; i < feeder.inverter_count(); ++i)
            if (feeder.bus_id(feeder.inverter_buses[i]) == id) return i;
        return -1;
    };
    std::vector<bool> have_p(static_cast<std::size_t>(feeder.load_count()), false);
    std::vector<bool> have_s(static_cast<std::size_t>(feeder.inverter_count()), false);
    for (std::size_t c = 0; c < names.size(); ++c) {
        const std::string& name = names[c];
        if (name.rfind("p_", 0) == 0) {
            const int l = find_load(name.substr(2));
            if (l < 0) throw SchemaError("profile column '" + name + "' matches no load bus");
            targets[c] = {&profiles.load_p, l};
            have_p[static_cast<std::size_t>(l)] = true;
        } else if (name.rfind("q_", 0) == 0) {
            const int l = find_load(name.substr(2));
            if (l < 0) throw SchemaError("profile column '" + name + "' matches no load bus");
            targets[c] = {&profiles.load_q, l};
        } else if (name.rfind("s_", 0) == 0) {
            const int i = find_inverter(name.substr(2));
            if (i < 0) throw SchemaError("profile column '" + name + "' matches no inverter bus");
            targets[c] = {&profiles.solar_p, i};
            have_s[static_cast<std::size_t>(i)] = true;
        } else {
            throw SchemaError("unknown profile column '" + name + "'");
        }
    }
    for (int l = 0; l < feeder.load_count(); ++l)
        if (!have_p[static_cast<std::size_t>(l)])
            throw SchemaError("missing p_ column for load bus " + feeder.bus_id(feeder.load_buses[l]));
    for (int i = 0; i < feeder.inverter_count(); ++i)
        if (!have_s[static_cast<std::size_t>(i)])
            throw SchemaError("missing s_ column for inverter bus " + feeder.bus_id(feeder.inverter_buses[i]));

    for (int t = 0; t < DayProfiles::kMinutes; ++t) {
        if (!std::getline(in, line)) throw SchemaError("profiles file needs 1440 data rows");
        std::stringstream ss(line);
        std::string cell;
        for (std::size_t c = 0; c < names.size(); ++c) {
            if (!std::getline(ss, cell, ',')) throw SchemaError("short row in profiles file");
            if (targets[c].first) (*targets[c].first)(targets[c].second, t) = std::stod(cell);
        }
    }
    profiles.validate(feeder);
    return profiles;
}

}  // namespace sensopf
