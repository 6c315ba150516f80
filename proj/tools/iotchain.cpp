// Command-line front end: run scenarios, print the size table, check receipts.
// Exit codes: 0 ok, 1 assertion or verification failure, 2 usage or config error.

#include <cctype>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "iotchain/scenarios.hpp"
#include "iotchain/sizes.hpp"

using namespace iotchain;
namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0, kFailed = 1, kUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunOptions {
  std::string scenario;
  std::optional<std::uint64_t> seed;
  std::optional<sim::Time> horizon;
  std::string out;
  std::string format = "text";
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw UsageError("cannot read " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void spit(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << text;
  if (!out) throw UsageError("cannot write " + p.string());
}

scen::Scenario resolve(const RunOptions& o) {
  auto s = scen::find_builtin(o.scenario);
  if (!s) {
    if (!fs::is_regular_file(o.scenario)) throw UsageError("unknown scenario '" + o.scenario + "'");
    s = scen::parse_scenario(slurp(o.scenario));
  }
  if (o.seed) s->seed = *o.seed;
  if (o.horizon) s->horizon = *o.horizon;
  return *s;
}

std::string verdict_text(const scen::Verdict& v, const std::string& format) {
  return format == "structured" ? v.structured() : v.text();
}

void write_ledgers(const scen::World& w, const fs::path& dir) {
  for (std::uint16_t r = 1; r <= w.config().rns; ++r)
    spit(dir / ("ledger-rn" + std::to_string(r) + ".txt"), w.rn(r).chain().export_text());
}

// Everything a run leaves behind goes under `dir`.
void write_artifacts(const scen::Scenario& s, const scen::RunResult& r, const fs::path& dir, const std::string& format) {
  const auto& w = *r.world;
  spit(dir / "scenario.json", scen::to_json(s) + "\n");
  spit(dir / "trace.txt", w.net().trace().text());
  write_ledgers(w, dir);
  spit(dir / (format == "structured" ? "verdict.jsonl" : "verdict.txt"), verdict_text(r.verdict, format));
  std::string index;
  for (const auto& d : w.devices()) {
    const auto& receipts = w.device(d.name).receipts();
    for (std::size_t i = 0; i < receipts.size(); ++i) {
      auto name = d.name + "-" + std::to_string(i) + ".proof";
      spit(dir / "receipts" / name, to_hex(merkle::serialize(receipts[i])) + "\n");
      index += name + " root=" + to_hex(receipts[i].root.view()) + "\n";
    }
  }
  if (!index.empty()) spit(dir / "receipts" / "index.txt", index);
}

int cmd_run(const RunOptions& o) {
  auto s = resolve(o);
  auto r = scen::run_scenario(s);
  if (!o.out.empty()) write_artifacts(s, r, o.out, o.format);
  std::cout << verdict_text(r.verdict, o.format);
  return r.verdict.passed() ? kOk : kFailed;
}

int cmd_suite(const RunOptions& o) {
  bool all = true;
  for (auto s : scen::builtin_suite()) {
    if (o.seed) s.seed = *o.seed;
    if (o.horizon) s.horizon = *o.horizon;
    auto r = scen::run_scenario(s);
    if (!o.out.empty()) write_artifacts(s, r, fs::path(o.out) / s.name, o.format);
    std::cout << verdict_text(r.verdict, o.format);
    all &= r.verdict.passed();
  }
  return all ? kOk : kFailed;
}

int cmd_export_ledger(const RunOptions& o, std::optional<std::uint16_t> rn) {
  auto s = resolve(o);
  auto r = scen::run_scenario(s);
  const auto& w = *r.world;
  if (rn && (*rn < 1 || *rn > w.config().rns)) throw UsageError("no regional node rn" + std::to_string(*rn));
  if (!o.out.empty()) {
    if (rn) spit(fs::path(o.out) / ("ledger-rn" + std::to_string(*rn) + ".txt"), w.rn(*rn).chain().export_text());
    else write_ledgers(w, o.out);
  } else {
    std::cout << w.rn(rn.value_or(1)).chain().export_text();
  }
  return kOk;
}

bool all_hex(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isxdigit(c); });
}

std::string strip(std::string s) {
  std::erase_if(s, [](unsigned char c) { return std::isspace(c); });
  return s;
}

int cmd_verify_proof(const std::string& file, const std::string& root_hex) {
  auto raw = slurp(file);
  auto text = strip(raw);
  // hex text as written by `run`, otherwise the binary encoding
  Bytes bytes = all_hex(text) && text.size() % 2 == 0 ? from_hex(text) : Bytes(raw.begin(), raw.end());
  merkle::MerkleProof proof;
  try {
    proof = merkle::parse_proof(bytes);
  } catch (const std::exception& e) {
    throw UsageError(std::string("unreadable proof: ") + e.what());
  }
  auto root = strip(root_hex);
  if (root.size() != 2 * kDigestSize || !all_hex(root)) throw UsageError("root must be " + std::to_string(2 * kDigestSize) + " hex digits");
  bool ok = merkle::verify_proof(proof) && proof.root == Digest::from(from_hex(root));
  std::cout << (ok ? "valid" : "invalid") << "\n";
  return ok ? kOk : kFailed;
}

void add_run_flags(CLI::App* c, RunOptions& o, bool scenario_required) {
  auto* s = c->add_option("--scenario", o.scenario, "built-in scenario name or scenario file");
  if (scenario_required) s->required();
  c->add_option("--seed", o.seed, "override the scenario seed");
  c->add_option("--horizon-ms", o.horizon, "override the simulated horizon");
  c->add_option("--format", o.format, "report format")->check(CLI::IsMember({"text", "structured"}));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Simulated IoT blockchain deployments"};
  app.require_subcommand(1);

  RunOptions run_opts;
  run_opts.out = "out";
  auto* run = app.add_subcommand("run", "run one scenario and write its artifacts");
  add_run_flags(run, run_opts, true);
  run->add_option("--out", run_opts.out, "output directory")->capture_default_str();

  RunOptions suite_opts;
  auto* suite = app.add_subcommand("suite", "run every built-in scenario");
  add_run_flags(suite, suite_opts, false);
  suite->add_option("--out", suite_opts.out, "write artifacts to DIR/<scenario>/");

  auto* sizes = app.add_subcommand("sizes", "print the transaction size table");

  std::string proof_file, root_hex;
  auto* verify = app.add_subcommand("verify-proof", "check a merkle receipt against a root");
  verify->add_option("proof", proof_file, "receipt file, hex or binary")->required();
  verify->add_option("root", root_hex, "expected root, hex")->required();

  RunOptions export_opts;
  std::optional<std::uint16_t> export_rn;
  auto* exp = app.add_subcommand("export-ledger", "run a scenario and export regional ledgers");
  add_run_flags(exp, export_opts, true);
  exp->add_option("--rn", export_rn, "only this regional node");
  exp->add_option("--out", export_opts.out, "output directory; stdout when absent");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*run) return cmd_run(run_opts);
    if (*suite) return cmd_suite(suite_opts);
    if (*sizes) {
      for (const auto& row : size_table()) std::cout << format(row) << "\n";
      return kOk;
    }
    if (*verify) return cmd_verify_proof(proof_file, root_hex);
    if (*exp) return cmd_export_ledger(export_opts, export_rn);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const sim::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}
