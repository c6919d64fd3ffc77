#pragma once

#include <string>
#include <vector>

#include "sensopf/training.hpp"

namespace sensopf {

/// Mean over test samples of ||x̂(θ_s) - x_s||² in raw units, pu².
double test_mse(const Predictor& predictor, const TrainingSet& test_set);

/// One comparison protocol: Monte Carlo draws of training subsets from a
/// labeled pool, paired P-DNN/SI-DNN training from identical initial weights,
/// test MSE and wall-clock per run.
struct ExperimentSpec {
    TrainingSet pool;  // labeled candidates (sensitivities attached)
    TrainingSet test;
    std::vector<TrainMode> modes{TrainMode::Plain, TrainMode::SensitivityInformed};
    int monte_carlo_runs = 5;
    std::vector<int> train_sizes{4};
    int epochs = 1000;
    std::uint64_t seed = 0;
    std::vector<int> hidden_dims{210, 210, 350};
    TrainConfig base;  // learning rate, μ, normalization; mode/epochs overridden per run
    std::string label = "experiment";
    int jobs = 1;      // parallel run slots; each run stays single-threaded
    bool record_curves = true;
    int curve_stride = 1;

    void validate() const;
};

struct RunOutcome {
    std::string label;
    int train_size = 0;
    int run = 0;
    TrainMode mode = TrainMode::Plain;
    double test_mse = 0.0;
    double train_seconds = 0.0;
    std::vector<double> train_loss_curve;
    std::vector<double> test_mse_curve;
    std::vector<int> subset;         // pool indices this run trained on
    double init_fingerprint = 0.0;   // checksum of the shared initial weights
    bool failed = false;
    std::string error;
};

struct ReportRow {
    std::string label;
    TrainMode mode = TrainMode::Plain;
    int runs = 0;
    int train_size = 0;
    int epochs = 0;
    double mean_test_mse = 0.0;      // pu²
    double mean_train_seconds = 0.0;
};

struct ExperimentResult {
    std::vector<ReportRow> rows;
    std::vector<RunOutcome> outcomes;
};

/// Runs every (train size, Monte Carlo run, mode) cell. Subset draws sample
/// without replacement; both modes of a run share initial weights, subset,
/// and normalization. Training failures mark the run and do not abort the
/// remaining runs.
ExperimentResult run_experiment(const ExperimentSpec& spec);

/// columns: experiment, mode, runs, train_size, epochs, mean_test_mse, mean_train_time_s
std::string report_csv(const std::vector<ReportRow>& rows);
void write_report_csv(const std::vector<ReportRow>& rows, const std::string& path);

/// columns: mode, train_size, run, epoch, train_loss, test_mse
std::string curves_csv(const std::vector<RunOutcome>& outcomes, int stride = 1);
void write_curves_csv(const std::vector<RunOutcome>& outcomes, const std::string& path, int stride = 1);

}  // namespace sensopf
