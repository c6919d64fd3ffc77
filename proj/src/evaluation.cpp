#include "sensopf/evaluation.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <thread>

#include "sensopf/rng.hpp"

namespace sensopf {

double test_mse(const Predictor& predictor, const TrainingSet& test_set) {
    if (test_set.empty()) throw EmptySet("test set is empty");
    test_set.validate();
    double total = 0.0;
    for (const SensitivityRecord& rec : test_set.records)
        total += (predictor.predict(rec.theta) - rec.x).squaredNorm();
    return total / static_cast<double>(test_set.size());
}

void ExperimentSpec::validate() const {
    if (monte_carlo_runs < 1) throw BadConfig("monte_carlo_runs must be at least 1");
    if (modes.empty()) throw BadConfig("at least one training mode required");
    if (train_sizes.empty()) throw BadConfig("at least one train size required");
    if (pool.empty()) throw EmptySet("training pool is empty");
    if (test.empty()) throw EmptySet("test set is empty");
    if (epochs < 0) throw BadConfig("epochs must be nonnegative");
    for (int size : train_sizes)
        if (size < 1 || size > pool.size()) throw BadConfig("train size must be in 1..pool size");
}

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (a * 1000003ull + b + 1ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

std::vector<int> draw_subset(const TrainingSet& pool, int size, std::uint64_t seed) {
    std::vector<int> indices(static_cast<std::size_t>(pool.size()));
    for (int i = 0; i < pool.size(); ++i) indices[static_cast<std::size_t>(i)] = i;
    Rng rng(seed);
    for (std::size_t i = indices.size(); i > 1; --i)
        std::swap(indices[i - 1], indices[rng.below(i)]);
    indices.resize(static_cast<std::size_t>(size));
    std::sort(indices.begin(), indices.end());
    return indices;
}

double model_fingerprint(const MlpModel& model) {
    double sum = 0.0;
    for (const Matrix& w : model.weights) sum += w.cwiseAbs().sum();
    return sum;
}

void run_parallel_slots(int n, int jobs, const std::function<void(int)>& fn) {
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

ExperimentResult run_experiment(const ExperimentSpec& spec) {
    spec.validate();
    spec.pool.validate();
    spec.test.validate();

    const int cells = static_cast<int>(spec.train_sizes.size()) * spec.monte_carlo_runs;
    ExperimentResult result;
    result.outcomes.resize(static_cast<std::size_t>(cells) * spec.modes.size());

    std::vector<int> layer_dims;
    layer_dims.push_back(spec.pool.theta_dim());
    for (int h : spec.hidden_dims) layer_dims.push_back(h);
    layer_dims.push_back(spec.pool.x_dim());

    run_parallel_slots(cells, spec.jobs, [&](int cell) {
        const int size_idx = cell / spec.monte_carlo_runs;
        const int run = cell % spec.monte_carlo_runs;
        const int train_size = spec.train_sizes[static_cast<std::size_t>(size_idx)];

        const std::vector<int> subset =
            draw_subset(spec.pool, train_size, mix_seed(spec.seed, static_cast<std::uint64_t>(train_size),
                                                        static_cast<std::uint64_t>(run)));
        TrainingSet train_set;
        for (int idx : subset) train_set.records.push_back(spec.pool.records[static_cast<std::size_t>(idx)]);

        const MlpModel initial =
            init_model(layer_dims, mix_seed(spec.seed ^ 0x5bf03635ull, static_cast<std::uint64_t>(train_size),
                                            static_cast<std::uint64_t>(run)));
        const double fingerprint = model_fingerprint(initial);

        for (std::size_t mode_idx = 0; mode_idx < spec.modes.size(); ++mode_idx) {
            RunOutcome& out = result.outcomes[static_cast<std::size_t>(cell) * spec.modes.size() + mode_idx];
            out.label = spec.label;
            out.train_size = train_size;
            out.run = run;
            out.mode = spec.modes[mode_idx];
            out.subset = subset;
            out.init_fingerprint = fingerprint;
            try {
                TrainConfig cfg = spec.base;
                cfg.mode = spec.modes[mode_idx];
                cfg.epochs = spec.epochs;
                FitResult fitted = fit(initial, train_set, cfg, spec.record_curves ? &spec.test : nullptr);
                out.test_mse = test_mse(fitted.predictor, spec.test);
                out.train_seconds = fitted.train_seconds;
                if (spec.record_curves) {
                    out.train_loss_curve = fitted.history.train_loss;
                    out.test_mse_curve = fitted.history.val_value_mse;
                }
            } catch (const Error& err) {
                out.failed = true;
                out.error = err.what();
            }
        }
    });

    for (int size : spec.train_sizes) {
        for (TrainMode mode : spec.modes) {
            ReportRow row;
            row.label = spec.label;
            row.mode = mode;
            row.train_size = size;
            row.epochs = spec.epochs;
            int successes = 0;
            for (const RunOutcome& out : result.outcomes) {
                if (out.train_size != size || out.mode != mode || out.failed) continue;
                row.mean_test_mse += out.test_mse;
                row.mean_train_seconds += out.train_seconds;
                ++successes;
            }
            if (successes > 0) {
                row.mean_test_mse /= successes;
                row.mean_train_seconds /= successes;
            }
            row.runs = successes;
            result.rows.push_back(row);
        }
    }
    return result;
}

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

}  // namespace

std::string report_csv(const std::vector<ReportRow>& rows) {
    std::string out = "experiment,mode,runs,train_size,epochs,mean_test_mse,mean_train_time_s\n";
    for (const ReportRow& row : rows) {
        out += row.label;
        out += ',';
        out += to_string(row.mode);
        out += ',' + std::to_string(row.runs);
        out += ',' + std::to_string(row.train_size);
        out += ',' + std::to_string(row.epochs);
        out += ',' + fmt(row.mean_test_mse);
        out += ',' + fmt(row.mean_train_seconds);
        out += '\n';
    }
    return out;
}

void write_report_csv(const std::vector<ReportRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw SchemaError("cannot write report file: " + path);
    out << report_csv(rows);
}

std::string curves_csv(const std::vector<RunOutcome>& outcomes, int stride) {
    if (stride < 1) stride = 1;
    std::string out = "mode,train_size,run,epoch,train_loss,test_mse\n";
    for (const RunOutcome& o : outcomes) {
        if (o.failed) continue;
        const std::size_t n = o.train_loss_curve.size();
        for (std::size_t i = 0; i < n; i += static_cast<std::size_t>(stride)) {
            out += to_string(o.mode);
            out += ',' + std::to_string(o.train_size);
            out += ',' + std::to_string(o.run);
            out += ',' + std::to_string(i);
            out += ',' + fmt(o.train_loss_curve[i]);
            out += ',' + ((i < o.test_mse_curve.size()) ? fmt(o.test_mse_curve[i]) : std::string(""));
            out += '\n';
        }
    }
    return out;
}

void write_curves_csv(const std::vector<RunOutcome>& outcomes, const std::string& path, int stride) {
    std::ofstream out(path);
    if (!out) throw SchemaError("cannot write curves file: " + path);
    out << curves_csv(outcomes, stride);
}

}  // namespace sensopf
