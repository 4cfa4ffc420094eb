// Copyright 2026 The difflab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "difflab/experiment.hpp"
#include "difflab/verify.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitClaimFailed = 1;
constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;

nlohmann::json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw difflab::ConfigError("cannot read config file: " + path);
  nlohmann::json j;
  in >> j;
  return j;
}

std::string default_out_dir() {
  const char* env = std::getenv("DIFFLAB_OUT");
  return env != nullptr ? env : "out";
}

int cmd_run(const std::string& config_path, const std::string& out,
            int jobs) {
  const auto cfg = difflab::parse_experiment_config(load_json(config_path));
  const auto result = difflab::run_experiment(cfg, out, jobs);
  std::cout << "wrote " << result.records.size() << " runs ("
            << cfg.cells.size() << " cells x " << cfg.seed_count
            << " seeds) to " << out << "\n";
  for (const auto& row : result.report) {
    std::cout << "  " << row.label
              << ": median final loss = " << row.median_final_loss
              << ", nfe = " << row.nfe_score << "\n";
  }
  return kExitOk;
}

int cmd_verify(const std::string& suite, std::uint64_t seed,
               const std::string& out) {
  std::vector<std::string> ids;
  if (suite == "all") {
    ids = difflab::claim_ids();
  } else {
    const auto& known = difflab::claim_ids();
    if (std::find(known.begin(), known.end(), suite) == known.end()) {
      std::cerr << "unknown claim id '" << suite << "'; known:";
      for (const auto& id : known) std::cerr << " " << id;
      std::cerr << "\n";
      return kExitValidation;
    }
    ids.push_back(suite);
  }
  std::filesystem::create_directories(out);
  bool all_pass = true;
  for (const auto& id : ids) {
    const auto rep = difflab::run_claim(id, seed);
    all_pass = all_pass && rep.pass;
    difflab::write_text_file(out + "/" + id + ".json",
                             difflab::claim_report_json(rep).dump(2) + "\n");
    if (!rep.csv.empty()) {
      difflab::write_text_file(out + "/" + id + ".csv", rep.csv);
    }
    std::cout << (rep.pass ? "[PASS] " : "[FAIL] ") << id << "\n";
  }
  return all_pass ? kExitOk : kExitClaimFailed;
}

int cmd_compare_fig3(const std::string& config_path, const std::string& out,
                     int jobs) {
  const auto cfg = difflab::parse_experiment_config(load_json(config_path));
  const auto rep = difflab::compare_fig3(cfg, jobs);
  std::filesystem::create_directories(out);
  difflab::write_text_file(out + "/compare_fig3.json",
                           difflab::paired_report_json(rep).dump(2) + "\n");
  std::string csv = "seed,gd_final_loss,pgd_final_loss\n";
  for (int s = 0; s < rep.seeds; ++s) {
    csv += std::to_string(s) + "," +
           difflab::fmt_g17(rep.gd_losses[static_cast<std::size_t>(s)]) + "," +
           difflab::fmt_g17(rep.pgd_losses[static_cast<std::size_t>(s)]) +
           "\n";
  }
  difflab::write_text_file(out + "/compare_fig3.csv", csv);
  std::cout << "pgd <= gd on " << 100.0 * rep.frac_pgd_not_worse
            << "% of " << rep.seeds << " paired seeds (median gd "
            << rep.median_gd << ", median pgd " << rep.median_pgd << ")\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"guided-diffusion numerical laboratory"};
  app.require_subcommand(1);

  std::string config_path, out = default_out_dir(), suite = "all";
  std::uint64_t seed = 2026;
  int jobs = 1;

  auto* run = app.add_subcommand("run", "execute an experiment config");
  run->add_option("config", config_path, "experiment config (JSON)")
      ->required();
  run->add_option("--out", out, "output directory");
  run->add_option("--jobs", jobs, "worker threads");

  auto* verify =
      app.add_subcommand("verify", "run one or all verification claims");
  verify->add_option("claim", suite, "claim id or 'all'")->required();
  verify->add_option("--seed", seed, "master seed");
  verify->add_option("--out", out, "output directory");

  auto* fig3 = app.add_subcommand(
      "compare-fig3", "paired gd/pgd comparison on matched seeds");
  fig3->add_option("config", config_path, "experiment config (JSON)")
      ->required();
  fig3->add_option("--out", out, "output directory");
  fig3->add_option("--jobs", jobs, "worker threads");

  try {
    app.parse(argc, argv);
    if (run->parsed()) return cmd_run(config_path, out, jobs);
    if (verify->parsed()) return cmd_verify(suite, seed, out);
    if (fig3->parsed()) return cmd_compare_fig3(config_path, out, jobs);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  } catch (const difflab::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what()
              << " (step " << e.step_index << ", grad norm " << e.grad_norm
              << ")\n";
    return kExitNumerical;
  } catch (const difflab::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const difflab::InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const difflab::CapabilityError& e) {
    std::cerr << "capability error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  }
  return kExitOk;
}
