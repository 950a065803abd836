// flsim: stake-based federated learning simulator.
// Subcommands: simulate, validate-theorem, verify-chain.

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "flsim/analysis.hpp"
#include "flsim/config.hpp"
#include "flsim/experiment.hpp"
#include "flsim/ledger_io.hpp"

namespace {

struct SimulateArgs {
    std::string config_path;
    bool dump_config = false;
    flsim::SpecOverrides ov;
    std::vector<std::uint64_t> seeds;
    std::uint64_t single_seed = 0;
};

int cmd_simulate(const SimulateArgs& args, const CLI::App& sub) {
    flsim::ExperimentSpec spec;
    if (!args.config_path.empty()) spec = flsim::spec_from_file(args.config_path);
    else spec.out_dir = flsim::default_out_dir();

    flsim::SpecOverrides ov = args.ov;
    if (sub.count("--seeds")) ov.seeds = args.seeds;
    else if (sub.count("--seed")) ov.seeds = std::vector<std::uint64_t>{args.single_seed};
    flsim::apply_overrides(spec, ov);
    flsim::validate_spec(spec);

    if (args.dump_config) {
        std::cout << flsim::spec_to_json(spec).dump(2) << '\n';
        return 0;
    }

    if (spec.eta >= 0.5)
        std::cerr << "warning: eta >= 0.5 violates the honest-majority assumption; "
                     "running as a stress test\n";

    const auto summaries = flsim::run_experiment(spec);
    for (const auto& s : summaries) {
        std::cout << flsim::run_stem(spec, s.seed) << ": rounds=" << s.rounds_completed
                  << " final_acc=" << flsim::format_double(s.final_test_accuracy)
                  << " last50_acc=" << flsim::format_double(s.last50_test_accuracy)
                  << " awards=" << s.awards << " slashes=" << s.slashes
                  << " removed_honest=" << s.removed_honest
                  << " removed_malicious=" << s.removed_malicious << '\n';
    }
    std::cout << "wrote " << summaries.size() << " run(s) to " << spec.out_dir << '\n';
    return 0;
}

int cmd_validate_theorem(const std::vector<double>& gammas, std::uint64_t samples,
                         std::uint64_t seed) {
    if (samples < 2)
        std::cerr << "warning: insufficient samples to estimate a standard error; "
                     "the tolerance check is vacuous\n";
    bool all_pass = true;
    std::cout << "gamma_v  estimate     closed_form  |error|      3*std_err    verdict\n";
    for (std::size_t i = 0; i < gammas.size(); ++i) {
        flsim::TheoremParams p;
        p.gamma_v = gammas[i];
        p.n_samples = samples;
        p.seed = flsim::derive_seed(seed, i);
        const auto res = flsim::mc_expected_return(p);
        const double err = std::abs(res.estimate - res.closed_form);
        const double tol = 3.0 * res.std_error;
        const bool pass = err < tol;
        all_pass = all_pass && pass;
        std::printf("%-8g %-12.6f %-12.6f %-12.6f %-12.6f %s\n", p.gamma_v, res.estimate,
                    res.closed_form, err, tol, pass ? "PASS" : "FAIL");
    }
    return all_pass ? 0 : 1;
}

int cmd_verify_chain(const std::string& path) {
    const auto res = flsim::verify_chain_file(path);
    if (res.valid) {
        std::cout << "chain valid\n";
        return 0;
    }
    std::cout << "chain INVALID";
    if (res.first_bad_index) std::cout << " at block " << *res.first_bad_index;
    std::cout << ": " << res.detail << '\n';
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Stake-based federated learning simulator"};
    app.require_subcommand(1);

    SimulateArgs sim;
    auto* simulate = app.add_subcommand("simulate", "Run a batch of simulation seeds");
    simulate->add_option("--config", sim.config_path, "JSON config file");
    simulate->add_flag("--dump-config", sim.dump_config,
                       "Print the effective config and exit");
    auto opt = [&](const char* name, auto& slot, const char* help) {
        return simulate->add_option(name, slot, help);
    };
    opt("--scenario", sim.ov.scenario,
        "full | honest_proposers_malicious_voters | malicious_proposers_honest_voters | "
        "fedavg_with_malicious | fedavg_without_malicious | oracle");
    opt("--eta", sim.ov.eta, "Malicious client ratio in [0, 0.5)");
    opt("--gamma-p", sim.ov.gamma_p, "Proposer stake");
    opt("--gamma-v", sim.ov.gamma_v, "Voter stake");
    opt("--epsilon", sim.ov.epsilon, "Vote tolerance in (0, 1)");
    opt("--clients", sim.ov.clients, "Number of clients");
    opt("--rounds", sim.ov.rounds, "Number of rounds");
    opt("--initial-tokens", sim.ov.initial_tokens, "Starting token balance");
    opt("--proposer-fraction", sim.ov.proposer_fraction, "Share of clients proposing");
    opt("--voter-fraction", sim.ov.voter_fraction, "Share of remaining clients voting");
    simulate->add_option("--seeds", sim.seeds, "Seeds to run")->delimiter(',');
    simulate->add_option("--seed", sim.single_seed, "Single seed")->excludes("--seeds");
    opt("--dataset", sim.ov.dataset_kind, "synthetic | csv");
    opt("--csv-path", sim.ov.csv_path, "CSV file for the csv dataset");
    opt("--label-column", sim.ov.label_column, "Label column name for the csv dataset");
    opt("--synthetic-n", sim.ov.synthetic_n, "Synthetic dataset size");
    opt("--synthetic-d", sim.ov.synthetic_d, "Synthetic feature count");
    opt("--separation", sim.ov.separation, "Synthetic class separation");
    opt("--partition", sim.ov.partition_mode, "iid | label_shard");
    opt("--shards-per-client", sim.ov.shards_per_client, "Shards per client (label_shard)");
    opt("--flip-rate", sim.ov.flip_rate, "Attack label flip probability");
    opt("--proximal-weight", sim.ov.proximal_weight, "Attack proximal pull strength");
    opt("--lr", sim.ov.learning_rate, "SGD learning rate");
    opt("--batch-size", sim.ov.batch_size, "SGD batch size");
    opt("--local-epochs", sim.ov.local_epochs, "Local epochs per proposal");
    opt("--arch", sim.ov.architecture, "logistic | mlp");
    simulate->add_option("--hidden", sim.ov.hidden, "MLP hidden layer sizes")->delimiter(',');
    opt("--out", sim.ov.out_dir, "Output directory");
    simulate->add_flag("--force", sim.ov.force, "Permit eta >= 0.5 stress runs");

    std::vector<double> gammas = {2, 4, 8, 16, 32};
    std::uint64_t samples = 1'000'000;
    std::uint64_t theorem_seed = 1;
    auto* validate =
        app.add_subcommand("validate-theorem", "Monte-Carlo check of the expected-return formula");
    validate->add_option("--gamma-v", gammas, "Voter stakes to test")->delimiter(',');
    validate->add_option("--samples", samples, "Monte-Carlo sample count");
    validate->add_option("--seed", theorem_seed, "Sampler seed");

    std::string chain_path;
    auto* verify = app.add_subcommand("verify-chain", "Verify an exported chain file");
    verify->add_option("path", chain_path, "Chain file (.jsonl)")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (simulate->parsed()) return cmd_simulate(sim, *simulate);
        if (validate->parsed()) return cmd_validate_theorem(gammas, samples, theorem_seed);
        if (verify->parsed()) return cmd_verify_chain(chain_path);
    } catch (const flsim::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const flsim::IoError& e) {
        std::cerr << "io error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
