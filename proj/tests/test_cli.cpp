#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "colan/dictionary.hpp"
#include "colan/matrix.hpp"
#include "colan/store.hpp"

using namespace colan;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path fixture(const char* name) { return fs::path(COLAN_FIXTURE_DIR) / name; }

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("colan_cli_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct CliResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

// Runs the installed binary through the shell; paths under /tmp are space-free
// so no quoting is needed.
CliResult run_cli(const TempDir& tmp, const std::string& args) {
  static int run_id = 0;
  const fs::path out = tmp.path / ("stdout_" + std::to_string(run_id) + ".txt");
  const fs::path err = tmp.path / ("stderr_" + std::to_string(run_id) + ".txt");
  ++run_id;
  const std::string cmd = std::string(COLAN_CLI_PATH) + " " + args + " > " + out.string() +
                          " 2> " + err.string();
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_file(out);
  r.err = read_file(err);
  return r;
}

// Three orthonormal atoms in a 6-dim score space; decompositions on it
// converge in one sweep, which keeps expected values exact.
void write_easy_dictionary(const fs::path& manifest) {
  const std::size_t d = 6;
  std::vector<float> cols(d * 3, 0.0f);
  cols[0 * 3 + 0] = 1.0f;  // alpha = e0
  cols[1 * 3 + 1] = 1.0f;  // beta  = e1
  cols[2 * 3 + 2] = 1.0f;  // gamma = e2
  const ConceptDictionary dict = ConceptDictionary::from_parts(
      LatentSpaceTag::score(d), {"alpha", "beta", "gamma"},
      std::vector<ReadMethod>(3, ReadMethod::avg), DenseMatrix(d, 3, std::move(cols)), true);
  store::save_dictionary(dict, manifest, "dict.clan");
}

void write_source(const fs::path& file, const std::vector<float>& v) {
  store::write_matrix(DenseMatrix(1, v.size(), v), file);
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("no subcommand is a usage error") {
  TempDir tmp;
  const CliResult r = run_cli(tmp, "");
  CHECK(r.exit_code == 1);
}

TEST_CASE("help exits zero and lists the pipeline") {
  TempDir tmp;
  const CliResult r = run_cli(tmp, "--help");
  CHECK(r.exit_code == 0);
  CHECK(r.out.find("decompose") != std::string::npos);
  CHECK(r.out.find("sweep") != std::string::npos);
}

TEST_CASE("replay and record are mutually exclusive") {
  TempDir tmp;
  const CliResult r = run_cli(tmp, "report --decomp nothing.json --replay a.json --record b.json");
  CHECK(r.exit_code == 1);
  CHECK(r.err.find("mutually exclusive") != std::string::npos);
}

TEST_CASE("offline decompose, edit, sweep, report pipeline") {
  TempDir tmp;
  const fs::path dict_file = tmp.path / "dict.json";
  write_easy_dictionary(dict_file);
  // v = 2*alpha + 0.5*beta
  write_source(tmp.path / "src.clan", {2.0f, 0.5f, 0.0f, 0.0f, 0.0f, 0.0f});
  const fs::path dec_file = tmp.path / "dec.json";

  const CliResult dec = run_cli(tmp, "decompose --source " + (tmp.path / "src.clan").string() +
                                         " --dict " + dict_file.string() + " --out " +
                                         dec_file.string() + " -o json -k 3");
  CAPTURE(dec.err);
  REQUIRE(dec.exit_code == 0);
  CHECK(dec.err.find("solve time:") != std::string::npos);
  const json report = json::parse(dec.out);
  CHECK(report["converged"] == true);
  CHECK(report["k"] == 3);
  REQUIRE(report["entries"].size() == 3);
  CHECK(report["entries"][0]["name"] == "alpha");
  CHECK(report["entries"][1]["name"] == "beta");
  CHECK(report["residual_norm"].get<double>() < 0.1);
  REQUIRE(fs::exists(dec_file));
  REQUIRE(fs::exists(tmp.path / "dec.source.clan"));
  REQUIRE(fs::exists(tmp.path / "dec.residual.clan"));

  const json stored = json::parse(read_file(dec_file));
  const auto names = stored["concepts"].get<std::vector<std::string>>();
  const auto weights = stored["weights"].get<std::vector<double>>();
  REQUIRE(names.size() == 3);
  const double w_alpha = weights[0];
  CHECK(w_alpha == doctest::Approx(1.995).epsilon(1e-9));  // S_{lambda/2}(2.0)

  // Replace alpha with gamma; the recorded manifest path rehydrates the dict.
  const fs::path edited_file = tmp.path / "edited.clan";
  const CliResult edit =
      run_cli(tmp, "edit --decomp " + dec_file.string() +
                       " --kind replace --source-concept alpha --target-concept gamma --out " +
                       edited_file.string() + " -o json");
  CAPTURE(edit.err);
  REQUIRE(edit.exit_code == 0);
  const json edit_out = json::parse(edit.out);
  CHECK(edit_out["kind"] == "replace");
  CHECK(edit_out["source_coefficient"].get<double>() == doctest::Approx(w_alpha));

  const DenseMatrix source = store::read_matrix(tmp.path / "src.clan");
  const DenseMatrix edited = store::read_matrix(edited_file);
  REQUIRE(edited.rows() == 1);
  REQUIRE(edited.cols() == 6);
  // delta identity: edited - source = w_alpha * (gamma - alpha)
  for (std::size_t j = 0; j < 6; ++j) {
    const double expected = (j == 0 ? -w_alpha : j == 2 ? w_alpha : 0.0);
    CHECK(edited.at(0, j) - source.at(0, j) == doctest::Approx(expected).epsilon(1e-5));
  }

  const CliResult bad_target =
      run_cli(tmp, "edit --decomp " + dec_file.string() +
                       " --kind replace --source-concept alpha --target-concept missing --out " +
                       (tmp.path / "x.clan").string());
  CHECK(bad_target.exit_code == 2);
  CHECK(bad_target.err.find("error:") != std::string::npos);

  const std::string prefix = (tmp.path / "sw_").string();
  const CliResult sweep =
      run_cli(tmp, "sweep --decomp " + dec_file.string() +
                       " --kind replace --source-concept alpha --target-concept gamma "
                       "--grid 0,0.5,1 --out-prefix " +
                       prefix);
  CAPTURE(sweep.err);
  REQUIRE(sweep.exit_code == 0);
  CHECK(sweep.out.find("-> " + prefix + "0.clan") != std::string::npos);
  for (int i = 0; i < 3; ++i) REQUIRE(fs::exists(prefix + std::to_string(i) + ".clan"));
  // alpha = 0 leaves the latent untouched; alpha walks a unit step direction.
  CHECK(store::read_matrix(prefix + "0.clan") == source);
  const DenseMatrix full = store::read_matrix(prefix + "2.clan");
  CHECK(full.at(0, 2) == doctest::Approx(1.0).epsilon(1e-5));  // v + 1.0 * (gamma - alpha)
  CHECK(full.at(0, 0) == doctest::Approx(1.0).epsilon(1e-5));

  const CliResult rep = run_cli(tmp, "report --decomp " + dec_file.string() + " -k 2 -o csv");
  REQUIRE(rep.exit_code == 0);
  CHECK(rep.out.rfind("name,coefficient,magnitude\n", 0) == 0);
  CHECK(rep.out.find("alpha,") != std::string::npos);
  CHECK(rep.err.find("converged: true") != std::string::npos);

  const CliResult plain = run_cli(tmp, "report --decomp " + dec_file.string() + " -k 1");
  REQUIRE(plain.exit_code == 0);
  CHECK(plain.out.find("top coefficients:") != std::string::npos);
  CHECK(plain.out.find("alpha") != std::string::npos);
}

TEST_CASE("strict mode turns non-convergence into exit 4") {
  TempDir tmp;
  // Correlated atoms: one sweep cannot reach the stationarity certificate.
  const std::size_t d = 4;
  std::vector<float> cols(d * 2, 0.0f);
  cols[0 * 2 + 0] = 1.0f;
  cols[0 * 2 + 1] = 0.8f;
  cols[1 * 2 + 1] = 0.6f;
  const ConceptDictionary dict = ConceptDictionary::from_parts(
      LatentSpaceTag::score(d), {"a", "b"}, std::vector<ReadMethod>(2, ReadMethod::avg),
      DenseMatrix(d, 2, std::move(cols)), true);
  store::save_dictionary(dict, tmp.path / "dict.json", "dict.clan");
  write_source(tmp.path / "src.clan", {1.8f, 0.6f, 0.0f, 0.0f});

  const std::string base = "decompose --source " + (tmp.path / "src.clan").string() +
                           " --dict " + (tmp.path / "dict.json").string() +
                           " --max-sweeps 1 --tol 1e-30";
  const CliResult lax = run_cli(tmp, base);
  CHECK(lax.exit_code == 0);
  CHECK(lax.err.find("warning:") != std::string::npos);

  const CliResult strict = run_cli(tmp, base + " --strict");
  CHECK(strict.exit_code == 4);
  CHECK(strict.err.find("error:") != std::string::npos);
}

TEST_CASE("decompose rejects a multi-row source") {
  TempDir tmp;
  write_easy_dictionary(tmp.path / "dict.json");
  store::write_matrix(DenseMatrix(2, 6, std::vector<float>(12, 1.0f)), tmp.path / "bad.clan");
  const CliResult r = run_cli(tmp, "decompose --source " + (tmp.path / "bad.clan").string() +
                                       " --dict " + (tmp.path / "dict.json").string());
  CHECK(r.exit_code == 2);
  CHECK(r.err.find("1 x d") != std::string::npos);
}

TEST_CASE("missing input files exit with the validation code") {
  TempDir tmp;
  const CliResult r = run_cli(tmp, "report --decomp " + (tmp.path / "nope.json").string());
  CHECK(r.exit_code == 2);
}

TEST_CASE("concepts parse replays a recorded session") {
  TempDir tmp;
  const fs::path out_file = tmp.path / "concepts.json";
  const CliResult r =
      run_cli(tmp, "concepts parse --task " + fixture("task_cake.json").string() + " --replay " +
                       fixture("cassette_parse_cake.json").string() + " -o json --out " +
                       out_file.string());
  CAPTURE(r.err);
  REQUIRE(r.exit_code == 0);
  const json out = json::parse(r.out);
  REQUIRE(out["concepts"].size() == 30);
  CHECK(out["concepts"][0] == "round");

  const json saved = json::parse(read_file(out_file));
  CHECK(saved["concepts"] == out["concepts"]);

  // Plain output: one concept per line.
  const CliResult plain =
      run_cli(tmp, "concepts parse --task " + fixture("task_cake.json").string() + " --replay " +
                       fixture("cassette_parse_cake.json").string());
  REQUIRE(plain.exit_code == 0);
  CHECK(plain.out.rfind("round\n", 0) == 0);
}

TEST_CASE("concepts rewrite replays the insertion fixtures") {
  TempDir tmp;
  const CliResult r =
      run_cli(tmp, "concepts rewrite --task " + fixture("task_bicycle.json").string() +
                       " --replay " + fixture("cassette_rewrite_bicycle.json").string());
  CAPTURE(r.err);
  REQUIRE(r.exit_code == 0);
  CHECK(r.out == "a slanted [new] mountain bicycle on the road in front of a building\n");
}

TEST_CASE("stimuli gen writes a dataset from a replayed session") {
  TempDir tmp;
  const fs::path ds = tmp.path / "dataset.json";
  const CliResult r =
      run_cli(tmp, "stimuli gen --concepts " + fixture("concepts_small.json").string() +
                       " --replay " + fixture("cassette_stimuli_dog.json").string() + " --out " +
                       ds.string());
  CAPTURE(r.err);
  REQUIRE(r.exit_code == 0);
  CHECK(r.err.find("wrote") != std::string::npos);
  CHECK(r.out.find("dog (30 stimuli)") != std::string::npos);

  const store::ConceptDataset dataset = store::read_dataset(ds);
  REQUIRE(dataset.records.size() == 1);
  CHECK(dataset.records[0].name == "dog");
  CHECK(dataset.records[0].stimuli.size() == 30);
}

TEST_CASE("embed writes per-concept matrices and an index") {
  TempDir tmp;
  const fs::path dir = tmp.path / "embeddings";
  const CliResult r = run_cli(tmp, "embed --dataset " + fixture("dataset_small.json").string() +
                                       " --replay " +
                                       fixture("cassette_embed_small.json").string() +
                                       " --out-dir " + dir.string());
  CAPTURE(r.err);
  REQUIRE(r.exit_code == 0);

  const json index = json::parse(read_file(dir / "index.json"));
  REQUIRE(index["entries"].size() == 2);
  CHECK(index["entries"][0]["concept"] == "alpha");
  const DenseMatrix alpha = store::read_matrix(dir / "0_alpha.clan");
  CHECK(alpha.rows() == 3);
  CHECK(alpha.cols() == 4);
  CHECK(fs::exists(dir / "1_beta.clan"));
}

TEST_CASE("dict build assembles a manifest from replayed embeddings") {
  TempDir tmp;
  const fs::path manifest = tmp.path / "dict.json";
  const CliResult r =
      run_cli(tmp, "dict build --dataset " + fixture("dataset_small.json").string() +
                       " --replay " + fixture("cassette_embed_small.json").string() +
                       " --method avg --space-kind score --flat-dim 4 --out " +
                       manifest.string() + " -o json");
  CAPTURE(r.err);
  REQUIRE(r.exit_code == 0);
  const json out = json::parse(r.out);
  CHECK(out["concepts"] == json::array({"alpha", "beta"}));
  CHECK(out["content_hash"].get<std::string>().size() == 64);

  const auto dict = store::load_dictionary(manifest);
  CHECK(dict->size() == 2);
  CHECK(dict->dim() == 4);
  CHECK(dict->space().kind == SpaceKind::score);
  for (std::size_t j = 0; j < 2; ++j) {
    const auto col = dict->column(j);
    double norm = 0.0;
    for (float x : col) norm += double(x) * x;
    CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-5));  // normalized by default
  }
}

TEST_CASE("a cassette recorded for another endpoint is a transport error") {
  TempDir tmp;
  const CliResult r = run_cli(tmp, "embed --dataset " + fixture("dataset_small.json").string() +
                                       " --replay " +
                                       fixture("cassette_parse_cake.json").string() +
                                       " --out-dir " + (tmp.path / "x").string());
  CHECK(r.exit_code == 3);
}

TEST_CASE("dry run prints the request bodies without a network") {
  TempDir tmp;
  const CliResult r = run_cli(tmp, "concepts parse --task " +
                                       fixture("task_cake.json").string() + " --dry-run");
  CAPTURE(r.err);
  REQUIRE(r.exit_code == 0);
  const json bodies = json::parse(r.out);
  REQUIRE(bodies.is_array());
  REQUIRE(bodies.size() == 1);
  CHECK(bodies[0]["model"] == "gpt-4o");
  CHECK(bodies[0]["messages"].is_array());
}

TEST_CASE("a live run without the named key env fails before any request") {
  TempDir tmp;
  const CliResult r = run_cli(tmp, "concepts parse --task " +
                                       fixture("task_cake.json").string() +
                                       " --api-key-env COLAN_KEY_THAT_IS_DEFINITELY_UNSET");
  CHECK(r.exit_code == 2);
  CHECK(r.err.find("COLAN_KEY_THAT_IS_DEFINITELY_UNSET is not set") != std::string::npos);
}

TEST_CASE("config file values apply and flags override them") {
  TempDir tmp;
  write_easy_dictionary(tmp.path / "dict.json");
  write_source(tmp.path / "src.clan", {2.0f, 0.5f, 0.0f, 0.0f, 0.0f, 0.0f});
  const fs::path dec_file = tmp.path / "dec.json";
  REQUIRE(run_cli(tmp, "decompose --source " + (tmp.path / "src.clan").string() + " --dict " +
                           (tmp.path / "dict.json").string() + " --out " + dec_file.string())
              .exit_code == 0);

  const fs::path cfg = tmp.path / "config.json";
  std::ofstream(cfg) << R"({"report_k": 2, "output": "json"})";

  const CliResult from_config =
      run_cli(tmp, "report --config " + cfg.string() + " --decomp " + dec_file.string());
  REQUIRE(from_config.exit_code == 0);
  CHECK(json::parse(from_config.out)["entries"].size() == 2);

  const CliResult overridden = run_cli(tmp, "report --config " + cfg.string() + " --decomp " +
                                                dec_file.string() + " -k 1");
  REQUIRE(overridden.exit_code == 0);
  CHECK(json::parse(overridden.out)["entries"].size() == 1);

  std::ofstream(cfg) << R"({"output": "yaml"})";
  const CliResult bad = run_cli(tmp, "report --config " + cfg.string() + " --decomp " +
                                          dec_file.string());
  CHECK(bad.exit_code == 2);
}

}  // TEST_SUITE
