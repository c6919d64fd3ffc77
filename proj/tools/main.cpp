#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "sensopf/evaluation.hpp"
#include "sensopf/scenarios.hpp"

namespace {

using namespace sensopf;
using nlohmann::json;

std::vector<int> parse_int_list(const std::string& text) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        if (cell.empty()) continue;
        out.push_back(std::stoi(cell));
    }
    return out;
}

json matrix_json(const Matrix& m) {
    json j;
    j["rows"] = m.rows();
    j["cols"] = m.cols();
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
    j["data"] = data;
    return j;
}

// Optional JSON config file; command-line flags win over file values.
class JsonConfig {
public:
    void attach(CLI::App* cmd) {
        cmd->add_option("--config", path_, "JSON config file (flags win over file values)");
    }

    template <typename T>
    void bind(CLI::App* cmd, const std::string& flag, T* target) {
        bindings_.push_back([cmd, flag, target](const json& j) {
            const std::string key = flag.substr(2);
            if (!j.contains(key)) return;
            if (cmd->count(flag) > 0) return;  // explicit flag wins
            *target = j.at(key).get<T>();
        });
    }

    void apply(CLI::App* cmd) {
        if (path_.empty()) return;
        std::ifstream in(path_);
        if (!in) throw SchemaError("cannot open config file: " + path_);
        json j = json::parse(in, nullptr, false);
        if (j.is_discarded() || !j.is_object()) throw SchemaError("config file must hold a JSON object");
        if (j.contains(cmd->get_name()) && j.at(cmd->get_name()).is_object()) j = j.at(cmd->get_name());
        for (auto& apply_one : bindings_) apply_one(j);
    }

private:
    std::string path_;
    std::vector<std::function<void(const json&)>> bindings_;
};

int default_jobs() {
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}

TrainingSet load_training_set(const std::string& path) {
    TrainingSet set;
    set.records = load_records(path);
    set.validate();
    return set;
}

std::string display_mse(double mse) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g pu^2 (%.4f x 1e-6 pu^2)", mse, mse * 1e6);
    return buf;
}

struct DatasetArgs {
    std::string feeder_path, profiles_path, output_prefix, save_profiles;
    bool synthetic = false;
    bool no_calibrate = false;
    std::uint64_t seed = 0;
    int hour = -1;
    bool full_day = false;
    int exclude_before = 0;
    int every_minutes = 15;
    double fraction = 0.0;
    std::uint64_t sample_seed = 0;
    int jobs = default_jobs();
    double nominal_load = 1.0;
    double penetration = 0.75;
    double power_factor = 0.9;
    double base_load = 0.03;
    double load_noise = 0.04;
    double solar_noise = 0.10;
};

int cmd_dataset(const DatasetArgs& args) {
    const Feeder feeder = load_feeder(args.feeder_path);
    const GridMatrices gm = build_grid_matrices(feeder);
    const MpqpInstance inst = assemble_mpqp(gm, feeder);

    DayProfiles profiles;
    if (args.synthetic) {
        ProfileGenConfig gen;
        gen.base_load = args.base_load;
        gen.load_noise = args.load_noise;
        gen.solar_noise = args.solar_noise;
        gen.power_factor = args.power_factor;
        profiles = generate_profiles(feeder, gen, args.seed);
    } else {
        if (args.profiles_path.empty()) throw BadConfig("either --profiles or --synthetic is required");
        profiles = load_profiles_csv(feeder, args.profiles_path);
    }
    if (!args.no_calibrate) {
        CalibConfig calib;
        calib.nominal_total_load = args.nominal_load;
        calib.solar_penetration = args.penetration;
        calib.power_factor = args.power_factor;
        profiles = calibrate_profiles(profiles, feeder, calib);
    }
    if (!args.save_profiles.empty()) save_profiles_csv(profiles, feeder, args.save_profiles);

    DatasetSpec spec;
    if (args.full_day || args.hour < 0) {
        spec.hour = -1;
        spec.exclude_before_hour = args.exclude_before;
    } else {
        spec.hour = args.hour;
    }
    if (args.fraction > 0.0) {
        spec.rule = DatasetSpec::Rule::RandomFraction;
        spec.fraction = args.fraction;
        spec.sample_seed = args.sample_seed;
    } else {
        spec.rule = DatasetSpec::Rule::EveryKMinutes;
        spec.every_k = args.every_minutes;
    }

    const Dataset ds = build_dataset(inst, profiles, feeder, spec, {}, args.jobs);
    save_dataset(ds, args.output_prefix);

    std::cout << "records: " << ds.summary.total << " (train " << ds.summary.train_size << ", test "
              << ds.summary.test_size << ")\n"
              << "no constraint active: " << ds.summary.no_active << "\n"
              << "with active constraints: " << ds.summary.with_active << "\n"
              << "degenerate (value-only): " << ds.summary.degenerate << "\n"
              << "LICQ violations: " << ds.summary.licq_violations << "\n"
              << "wrote " << args.output_prefix << ".{train,test}.jsonl and .summary.json\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Learned reactive dispatch for radial feeders: exact QP solves, minimizer "
                 "sensitivities, and sensitivity-informed network training"};
    app.require_subcommand(1);

    // build-feeder --------------------------------------------------------
    auto* build = app.add_subcommand("build-feeder", "Validate a feeder file and emit its grid matrices");
    std::string bf_input, bf_output, bf_instance;
    build->add_option("--input", bf_input, "feeder JSON")->required();
    build->add_option("--output", bf_output, "grid-matrices bundle path")->required();
    build->add_option("--instance", bf_instance, "also dump the assembled MPQP bundle here");
    build->callback([&]() {
        const Feeder feeder = load_feeder(bf_input);
        const GridMatrices gm = build_grid_matrices(feeder);
        json bundle;
        bundle["format_version"] = 1;
        bundle["R"] = matrix_json(gm.R);
        bundle["X"] = matrix_json(gm.X);
        bundle["Fi"] = matrix_json(gm.Fi);
        bundle["Fl"] = matrix_json(gm.Fl);
        bundle["report"] = {{"bus_count", feeder.bus_count},
                            {"inverters", feeder.inverter_count()},
                            {"loads", feeder.load_count()},
                            {"voltage_band", feeder.voltage_band},
                            {"positive_definite", true}};
        std::ofstream out(bf_output);
        if (!out) throw SchemaError("cannot write " + bf_output);
        out << bundle.dump(2) << "\n";
        if (!bf_instance.empty()) {
            std::ofstream io(bf_instance);
            if (!io) throw SchemaError("cannot write " + bf_instance);
            io << instance_to_json(assemble_mpqp(gm, feeder)) << "\n";
        }
        std::cout << "feeder ok: " << feeder.bus_count << " buses, " << feeder.inverter_count()
                  << " inverters, " << feeder.load_count() << " loads\n";
    });

    // dataset --------------------------------------------------------------
    auto* dataset = app.add_subcommand("dataset", "Label a day of OPF scenarios with minimizers and sensitivities");
    DatasetArgs da;
    JsonConfig dataset_cfg;
    dataset_cfg.attach(dataset);
    dataset->add_option("--feeder", da.feeder_path, "feeder JSON")->required();
    dataset->add_option("--profiles", da.profiles_path, "profiles CSV (minute rows)");
    dataset->add_flag("--synthetic", da.synthetic, "generate a synthetic day instead of importing");
    dataset->add_option("--seed", da.seed, "synthetic generator seed");
    dataset->add_option("--hour", da.hour, "restrict to one hour 0..23");
    dataset->add_flag("--full-day", da.full_day, "use the whole day");
    dataset->add_option("--exclude-before", da.exclude_before, "full-day: drop hours before this one");
    dataset->add_option("--every-minutes", da.every_minutes, "train on a fixed minute grid");
    dataset->add_option("--fraction", da.fraction, "train on a random fraction instead of a grid");
    dataset->add_option("--sample-seed", da.sample_seed, "seed for --fraction");
    dataset->add_option("--jobs", da.jobs, "parallel OPF solves");
    dataset->add_option("--nominal-load", da.nominal_load, "duration-curve anchor, pu");
    dataset->add_option("--penetration", da.penetration, "solar energy fraction of load energy");
    dataset->add_option("--power-factor", da.power_factor, "lagging power factor for reactive loads");
    dataset->add_option("--base-load", da.base_load, "synthetic per-load mean level, pu");
    dataset->add_option("--load-noise", da.load_noise, "synthetic demand noise amplitude");
    dataset->add_option("--solar-noise", da.solar_noise, "synthetic solar noise amplitude");
    dataset->add_flag("--no-calibrate", da.no_calibrate, "skip duration-curve/penetration calibration");
    dataset->add_option("--save-profiles", da.save_profiles, "also write the day as a profiles CSV");
    dataset->add_option("--output", da.output_prefix, "output prefix")->required();
    dataset_cfg.bind(dataset, "--seed", &da.seed);
    dataset_cfg.bind(dataset, "--nominal-load", &da.nominal_load);
    dataset_cfg.bind(dataset, "--penetration", &da.penetration);
    dataset_cfg.bind(dataset, "--power-factor", &da.power_factor);
    dataset_cfg.bind(dataset, "--base-load", &da.base_load);
    dataset_cfg.bind(dataset, "--load-noise", &da.load_noise);
    dataset_cfg.bind(dataset, "--solar-noise", &da.solar_noise);
    dataset->callback([&]() {
        dataset_cfg.apply(dataset);
        cmd_dataset(da);
    });

    // train ------------------------------------------------------------------
    auto* train_cmd = app.add_subcommand("train", "Fit a predictor to a labeled dataset");
    std::string tr_dataset, tr_val, tr_output, tr_curves, tr_mode = "plain", tr_hidden = "210,210,350";
    TrainConfig tr_cfg;
    std::uint64_t tr_seed = 0;
    bool tr_raw = false;
    train_cmd->add_option("--dataset", tr_dataset, "training records (jsonl)")->required();
    train_cmd->add_option("--val", tr_val, "validation records for per-epoch curves");
    train_cmd->add_option("--mode", tr_mode, "plain | si")->check(CLI::IsMember({"plain", "si"}));
    train_cmd->add_option("--epochs", tr_cfg.epochs, "training epochs");
    train_cmd->add_option("--lr", tr_cfg.learning_rate, "Adam learning rate");
    train_cmd->add_option("--mu", tr_cfg.jacobian_weight, "Jacobian mismatch weight");
    train_cmd->add_option("--batch-size", tr_cfg.batch_size, "minibatch size (0 = full batch)");
    train_cmd->add_option("--seed", tr_seed, "weight initialization seed");
    train_cmd->add_option("--hidden", tr_hidden, "hidden layer sizes, comma separated (empty = linear)");
    train_cmd->add_flag("--raw", tr_raw, "fit in raw units without standardization");
    train_cmd->add_option("--output", tr_output, "model file")->required();
    train_cmd->add_option("--curves", tr_curves, "loss-curve CSV path");
    train_cmd->callback([&]() {
        const TrainingSet data = load_training_set(tr_dataset);
        TrainingSet val;
        if (!tr_val.empty()) val = load_training_set(tr_val);
        tr_cfg.mode = train_mode_from_string(tr_mode);
        tr_cfg.seed = tr_seed;
        tr_cfg.normalize = !tr_raw;
        std::vector<int> dims{data.theta_dim()};
        for (int h : parse_int_list(tr_hidden)) dims.push_back(h);
        dims.push_back(data.x_dim());
        const MlpModel initial = init_model(dims, tr_seed);
        const FitResult fitted = fit(initial, data, tr_cfg, val.empty() ? nullptr : &val);
        save_predictor(fitted.predictor, tr_output);
        if (!tr_curves.empty()) {
            std::ofstream out(tr_curves);
            if (!out) throw SchemaError("cannot write " + tr_curves);
            out << "epoch,train_loss,test_mse\n";
            for (std::size_t i = 0; i < fitted.history.train_loss.size(); ++i) {
                char buf[96];
                if (i < fitted.history.val_value_mse.size())
                    std::snprintf(buf, sizeof(buf), "%zu,%.12g,%.12g\n", i, fitted.history.train_loss[i],
                                  fitted.history.val_value_mse[i]);
                else
                    std::snprintf(buf, sizeof(buf), "%zu,%.12g,\n", i, fitted.history.train_loss[i]);
                out << buf;
            }
        }
        const double final_loss = fitted.history.train_loss.empty() ? 0.0 : fitted.history.train_loss.back();
        std::cout << "trained " << tr_mode << " model for " << tr_cfg.epochs << " epochs in "
                  << fitted.train_seconds << " s, final loss " << final_loss << "\n"
                  << "wrote " << tr_output << "\n";
    });

    // eval -------------------------------------------------------------------
    auto* eval_cmd = app.add_subcommand("eval", "Test MSE of a model on a record file");
    std::string ev_model, ev_testset, ev_report, ev_label = "eval";
    eval_cmd->add_option("--model", ev_model, "model file")->required();
    eval_cmd->add_option("--testset", ev_testset, "test records (jsonl)")->required();
    eval_cmd->add_option("--report", ev_report, "append-style report CSV path");
    eval_cmd->add_option("--label", ev_label, "experiment label for the report row");
    eval_cmd->callback([&]() {
        const Predictor predictor = load_predictor(ev_model);
        const TrainingSet test = load_training_set(ev_testset);
        const double mse = test_mse(predictor, test);
        std::cout << "test MSE: " << display_mse(mse) << "\n";
        if (!ev_report.empty()) {
            ReportRow row;
            row.label = ev_label;
            row.mode = TrainMode::Plain;
            row.runs = 1;
            row.train_size = 0;
            row.epochs = 0;
            row.mean_test_mse = mse;
            row.mean_train_seconds = 0.0;
            write_report_csv({row}, ev_report);
        }
    });

    // bench ------------------------------------------------------------------
    auto* bench = app.add_subcommand("bench", "Paired P-DNN / SI-DNN comparison over Monte Carlo draws");
    std::string be_pool, be_test, be_report, be_curves, be_modes = "plain,si", be_sizes = "4",
                be_hidden = "210,210,350", be_label = "bench";
    int be_runs = 5, be_epochs = 1000, be_stride = 1, be_jobs = 1;
    std::uint64_t be_seed = 0;
    TrainConfig be_base;
    bench->add_option("--pool", be_pool, "labeled training pool (jsonl)")->required();
    bench->add_option("--testset", be_test, "test records (jsonl)")->required();
    bench->add_option("--runs", be_runs, "Monte Carlo runs");
    bench->add_option("--train-sizes", be_sizes, "scenario counts, comma separated");
    bench->add_option("--epochs", be_epochs, "training epochs");
    bench->add_option("--seed", be_seed, "experiment seed");
    bench->add_option("--modes", be_modes, "comma separated: plain,si");
    bench->add_option("--hidden", be_hidden, "hidden layer sizes");
    bench->add_option("--lr", be_base.learning_rate, "Adam learning rate");
    bench->add_option("--mu", be_base.jacobian_weight, "Jacobian mismatch weight");
    bench->add_option("--jobs", be_jobs, "parallel run slots");
    bench->add_option("--stride", be_stride, "curve thinning stride");
    bench->add_option("--label", be_label, "experiment label");
    bench->add_option("--report", be_report, "report CSV path")->required();
    bench->add_option("--curves", be_curves, "curves CSV path");
    bench->callback([&]() {
        ExperimentSpec spec;
        spec.pool = load_training_set(be_pool);
        spec.test = load_training_set(be_test);
        spec.monte_carlo_runs = be_runs;
        spec.train_sizes = parse_int_list(be_sizes);
        spec.epochs = be_epochs;
        spec.seed = be_seed;
        spec.hidden_dims = parse_int_list(be_hidden);
        spec.base = be_base;
        spec.label = be_label;
        spec.jobs = be_jobs;
        spec.record_curves = !be_curves.empty();
        spec.modes.clear();
        std::stringstream ss(be_modes);
        std::string cell;
        while (std::getline(ss, cell, ',')) spec.modes.push_back(train_mode_from_string(cell));

        const ExperimentResult result = run_experiment(spec);
        write_report_csv(result.rows, be_report);
        if (!be_curves.empty()) write_curves_csv(result.outcomes, be_curves, be_stride);
        for (const ReportRow& row : result.rows) {
            std::cout << row.label << " size=" << row.train_size << " " << to_string(row.mode)
                      << ": mean test MSE " << display_mse(row.mean_test_mse) << ", mean train time "
                      << row.mean_train_seconds << " s over " << row.runs << " runs\n";
        }
        for (const RunOutcome& out : result.outcomes)
            if (out.failed)
                std::cout << "run " << out.run << " (" << to_string(out.mode) << ", size " << out.train_size
                          << ") failed: " << out.error << "\n";
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const sensopf::NonFiniteLoss& e) {
        std::cerr << "error: " << e.what() << " (epoch " << e.epoch << ")\n";
        return 5;
    } catch (const sensopf::InfeasibleQp& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const sensopf::NotATree& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const sensopf::NonPositiveImpedance& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const sensopf::InvalidFeeder& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const sensopf::NotPositiveDefinite& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const sensopf::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
