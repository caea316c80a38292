#include <cerrno>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "ntklab/ntklab.h"

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

enum Exit { kOk = 0, kVerdict = 1, kUsage = 2, kDivergence = 3, kInfeasible = 4 };

struct CliError {
  int code;
  std::string message;
};

int exit_for_status(int status) {
  if (status == NTKLAB_ERR_DIVERGENCE) return kDivergence;
  if (status == NTKLAB_ERR_PLAN_INFEASIBLE) return kInfeasible;
  return kUsage;
}

void check(int status) {
  if (status == NTKLAB_OK) return;
  std::string msg = ntklab_last_error();
  if (status == NTKLAB_ERR_DIVERGENCE) {
    msg = "divergence at step " + std::to_string(ntklab_last_divergence_step()) + ": " + msg;
  }
  throw CliError{exit_for_status(status), msg};
}

// Owns a malloc'd buffer handed out by the library.
struct Owned {
  char* p = nullptr;
  ~Owned() { ntklab_free(p); }
  std::string str() const { return p ? std::string(p) : std::string(); }
};

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CliError{kUsage, "cannot read " + path};
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Json parse_config(const std::string& path) {
  const std::string text = read_file(path);
  try {
    Json j = Json::parse(text);
    if (!j.is_object()) throw CliError{kUsage, path + ": config must be a JSON object"};
    return j;
  } catch (const Json::exception& e) {
    throw CliError{kUsage, path + ": malformed JSON: " + e.what()};
  }
}

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("NTKLAB_SEED");
  if (s == nullptr || *s == '\0') return std::nullopt;
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(s, &end, 10);
  if (errno != 0 || *end != '\0' || s[0] == '-') {
    throw CliError{kUsage, "NTKLAB_SEED must be a non-negative integer"};
  }
  return v;
}

// Writes through a temporary file in the same directory, then renames.
void write_atomic(const fs::path& path, const std::string& bytes, bool overwrite) {
  if (!overwrite && fs::exists(path)) {
    throw CliError{kUsage, path.string() + " exists (set io.overwrite or pass --overwrite)"};
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CliError{kUsage, "cannot write " + tmp.string()};
    out.write(bytes.data(), std::streamsize(bytes.size()));
    out.flush();
    if (!out) throw CliError{kUsage, "write failed for " + tmp.string()};
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw CliError{kUsage, "cannot rename into " + path.string() + ": " + ec.message()};
  }
}

Json manifest(const std::string& command, const std::string& config_text,
              const Json& seeds, const std::vector<std::string>& outputs) {
  Json m;
  m["command"] = command;
  m["config_hash"] = "fnv1a64:" + hex64(fnv1a64(config_text));
  m["seeds"] = seeds;
  m["code_version"] = ntklab_version();
  m["outputs"] = outputs;
  return m;
}

struct IoOptions {
  std::string out_dir;
  std::string format = "csv";
  bool overwrite = false;
};

IoOptions io_from(const Json& config) {
  IoOptions io;
  if (!config.contains("io")) return io;
  const Json& j = config.at("io");
  if (!j.is_object()) return io;  // library rejects it
  if (j.contains("out_dir") && j["out_dir"].is_string()) io.out_dir = j["out_dir"];
  if (j.contains("format") && j["format"].is_string()) io.format = j["format"];
  if (j.contains("overwrite") && j["overwrite"].is_boolean()) io.overwrite = j["overwrite"];
  return io;
}

void emit(const std::string& out, const std::string& text, bool overwrite) {
  if (out.empty() || out == "-") {
    std::cout << text;
  } else {
    write_atomic(out, text, overwrite);
  }
}

// ---------------------------------------------------------------- commands

struct SpectrumArgs {
  int d = 0;
  int h_max = 8;
  bool oracle = false;
  std::string out;
};

int cmd_spectrum(const SpectrumArgs& a) {
  Owned json;
  double worst = 0.0;
  check(ntklab_spectrum(a.d, a.h_max, a.oracle ? 1 : 0, &json.p, &worst));
  emit(a.out, json.str(), true);
  if (a.oracle && worst > 1e-6) {
    std::cerr << "oracle mismatch: max relative error " << worst << " > 1e-6\n";
    return kVerdict;
  }
  return kOk;
}

struct CheckArgs {
  std::string config;
  std::string out;
};

int cmd_check(const CheckArgs& a) {
  const std::string text = read_file(a.config);
  Owned report;
  int all_hold = 0;
  check(ntklab_check(text.c_str(), &report.p, &all_hold));
  emit(a.out, report.str(), true);
  return all_hold ? kOk : kVerdict;
}

Json with_seed(Json config) {
  if (!config.contains("seed")) {
    const auto s = env_seed();
    config["seed"] = s.value_or(0);
  }
  return config;
}

struct DataArgs {
  std::string config;
  std::string out;
};

int cmd_data(const DataArgs& a) {
  const Json config = with_seed(parse_config(a.config));
  const std::string text = config.dump();
  Owned csv;
  check(ntklab_data(text.c_str(), &csv.p));
  const IoOptions io = io_from(config);
  if (!a.out.empty()) {
    emit(a.out, csv.str(), true);
  } else if (!io.out_dir.empty()) {
    const fs::path dir = io.out_dir;
    write_atomic(dir / "data.csv", csv.str(), io.overwrite);
    write_atomic(dir / "manifest.json",
                 manifest("data", text, Json::array({config["seed"]}), {"data.csv"}).dump(2) + "\n",
                 io.overwrite);
  } else {
    std::cout << csv.str();
  }
  return kOk;
}

struct TrainArgs {
  std::string config;
  std::string mode;
  std::string out_dir;
  bool overwrite = false;
};

struct RunHandle {
  ntklab_run* p = nullptr;
  ~RunHandle() { ntklab_run_free(p); }
};

int cmd_train(const TrainArgs& a) {
  const Json config = with_seed(parse_config(a.config));
  const std::string text = config.dump();
  IoOptions io = io_from(config);
  if (!a.out_dir.empty()) io.out_dir = a.out_dir;
  if (a.overwrite) io.overwrite = true;
  if (io.out_dir.empty()) io.out_dir = "train_out";

  RunHandle run;
  check(ntklab_train(text.c_str(), a.mode.c_str(), &run.p));

  Owned traj, effective, sidecar;
  std::string traj_name;
  if (io.format == "json") {
    check(ntklab_run_trajectory_json(run.p, &traj.p));
    traj_name = "trajectory.json";
  } else {
    check(ntklab_run_trajectory_csv(run.p, &traj.p));
    traj_name = "trajectory.csv";
  }
  check(ntklab_run_config_json(run.p, &effective.p));
  check(ntklab_run_checkpoint_sidecar(run.p, &sidecar.p));
  unsigned char* bytes = nullptr;
  std::size_t size = 0;
  check(ntklab_run_checkpoint(run.p, &bytes, &size));
  const std::string ckpt(reinterpret_cast<const char*>(bytes), size);
  ntklab_free(bytes);

  const fs::path dir = io.out_dir;
  write_atomic(dir / traj_name, traj.str(), io.overwrite);
  write_atomic(dir / "final.ckpt", ckpt, io.overwrite);
  write_atomic(dir / "final.ckpt.json", sidecar.str(), io.overwrite);
  write_atomic(dir / "config.json", effective.str(), io.overwrite);
  const Json m = manifest("train --mode " + a.mode, text, Json::array({config["seed"]}),
                          {traj_name, "final.ckpt", "final.ckpt.json", "config.json"});
  write_atomic(dir / "manifest.json", m.dump(2) + "\n", io.overwrite);
  return kOk;
}

struct VerifyArgs {
  std::string suite;
  int seeds = -1;
  int jobs = 1;
  std::string config;
  std::string out_dir;
  std::optional<std::uint64_t> base_seed;
  bool overwrite = false;
};

int cmd_verify(const VerifyArgs& a) {
  std::vector<std::string> suites;
  if (a.suite == "all") {
    Owned names;
    check(ntklab_suite_names(&names.p));
    for (const auto& n : Json::parse(names.str())) suites.push_back(n.get<std::string>());
  } else {
    suites.push_back(a.suite);
  }
  // Overrides file: either a flat object for one suite, or keyed by suite.
  Json overrides = Json::object();
  IoOptions io;
  if (!a.config.empty()) {
    overrides = parse_config(a.config);
    io = io_from(overrides);
    overrides.erase("io");
  }
  if (!a.out_dir.empty()) io.out_dir = a.out_dir;
  if (a.overwrite) io.overwrite = true;
  if (io.out_dir.empty() && suites.size() > 1) io.out_dir = "verify_out";
  std::uint64_t base = 0;
  if (a.base_seed) {
    base = *a.base_seed;
  } else if (const auto s = env_seed()) {
    base = *s;
  }

  bool all_pass = true;
  std::vector<std::string> outputs;
  Json seed_info = Json::object();
  for (const auto& suite : suites) {
    std::string ov;
    if (overrides.contains(suite) && overrides[suite].is_object()) {
      ov = overrides[suite].dump();
    } else if (suites.size() == 1 && !overrides.empty()) {
      ov = overrides.dump();
    }
    Owned report;
    int verdict = 0;
    check(ntklab_verify(suite.c_str(), ov.empty() ? nullptr : ov.c_str(), a.seeds, base,
                        a.jobs, &report.p, &verdict));
    all_pass = all_pass && verdict;
    const Json rep = Json::parse(report.str());
    seed_info[suite] = {{"base", base}, {"count", rep["config"]["seeds"]}};
    std::cerr << suite << ": verdict " << (verdict ? "pass" : "FAIL") << "\n";
    if (io.out_dir.empty()) {
      std::cout << report.str();
    } else {
      const std::string name = suite + ".json";
      write_atomic(fs::path(io.out_dir) / name, report.str(), io.overwrite);
      outputs.push_back(name);
    }
  }
  if (!io.out_dir.empty()) {
    const std::string cmd = "verify --suite " + a.suite +
                            (a.seeds >= 0 ? " --seeds " + std::to_string(a.seeds) : "");
    write_atomic(fs::path(io.out_dir) / "manifest.json",
                 manifest(cmd, overrides.dump(), seed_info, outputs).dump(2) + "\n",
                 io.overwrite);
  }
  return all_pass ? kOk : kVerdict;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ntklab: NTK gradient-flow experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(ntklab_version()));

  SpectrumArgs sp;
  auto* spectrum = app.add_subcommand("spectrum", "eigenvalues of the analytical NTK");
  spectrum->add_option("--d", sp.d, "ambient dimension")->required();
  spectrum->add_option("--h-max", sp.h_max, "largest harmonic order")->capture_default_str();
  spectrum->add_flag("--oracle", sp.oracle, "cross-check against quadrature");
  spectrum->add_option("--out", sp.out, "output file (default stdout)");

  CheckArgs ck;
  auto* checkc = app.add_subcommand("check", "evaluate the assumption inequalities");
  checkc->add_option("--config", ck.config, "parameter tuple JSON")->required();
  checkc->add_option("--out", ck.out, "output file (default stdout)");

  DataArgs da;
  auto* data = app.add_subcommand("data", "generate a labelled sample");
  data->add_option("--config", da.config, "data config JSON")->required();
  data->add_option("--out", da.out, "output CSV (default io.out_dir or stdout)");

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "run gradient flow");
  train->add_option("--config", tr.config, "train config JSON")->required();
  train->add_option("--mode", tr.mode, "trajectory")
      ->required()
      ->check(CLI::IsMember({"empirical", "population", "joint"}));
  train->add_option("--out-dir", tr.out_dir, "output directory (overrides io.out_dir)");
  train->add_flag("--overwrite", tr.overwrite, "replace existing outputs");

  VerifyArgs ve;
  std::uint64_t base_seed = 0;
  auto* verify = app.add_subcommand("verify", "run verification suites");
  verify->add_option("--suite", ve.suite, "suite name or all")->required();
  verify->add_option("--seeds", ve.seeds, "number of seeds (default per suite)")
      ->check(CLI::Range(1, 100000));
  verify->add_option("--jobs", ve.jobs, "worker threads")->check(CLI::Range(1, 1024));
  verify->add_option("--config", ve.config, "suite overrides JSON");
  verify->add_option("--out-dir", ve.out_dir, "output directory (default stdout for one suite)");
  auto* base_opt = verify->add_option("--base-seed", base_seed, "first seed (default NTKLAB_SEED or 0)");
  verify->add_flag("--overwrite", ve.overwrite, "replace existing outputs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*spectrum) return cmd_spectrum(sp);
    if (*checkc) return cmd_check(ck);
    if (*data) return cmd_data(da);
    if (*train) return cmd_train(tr);
    if (*verify) {
      if (*base_opt) ve.base_seed = base_seed;
      if (ve.suite != "all") {
        Owned names;
        check(ntklab_suite_names(&names.p));
        bool known = false;
        for (const auto& n : Json::parse(names.str())) known = known || n == ve.suite;
        if (!known) throw CliError{kUsage, "unknown suite '" + ve.suite + "'"};
      }
      return cmd_verify(ve);
    }
  } catch (const CliError& e) {
    std::cerr << "ntklab: " << e.message << "\n";
    return e.code;
  } catch (const std::exception& e) {
    std::cerr << "ntklab: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}
