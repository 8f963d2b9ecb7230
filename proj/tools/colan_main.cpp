// colan: concept-transplant pipeline driver.
//
// Subcommands map onto the pipeline stages: concept mining (concepts parse /
// concepts rewrite / stimuli gen), embedding (embed), dictionary assembly
// (dict build), sparse decomposition (decompose), and editing (edit / sweep /
// report). Exit codes: 0 ok, 1 usage, 2 validation, 3 transport, 4 numeric.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "colan/dictionary.hpp"
#include "colan/errors.hpp"
#include "colan/kernels.hpp"
#include "colan/matrix.hpp"
#include "colan/mining/client.hpp"
#include "colan/mining/transport.hpp"
#include "colan/solver.hpp"
#include "colan/store.hpp"
#include "colan/transplant.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace colan;

namespace {

// ---------------------------------------------------------------------------
// Run configuration: built-in defaults, overridden by the config file,
// overridden by flags (flags are bound directly to these fields and CLI11
// only writes the ones that were passed).
// ---------------------------------------------------------------------------

struct RunConfig {
  SolverConfig solver;
  mining::ClientConfig client;
  LatentSpaceTag space = LatentSpaceTag::text_embedding();
  std::string cache_dir;
  std::size_t report_k = 10;
  std::string output = "plain";
};

struct CliContext {
  RunConfig cfg;
  std::string replay_path;
  std::string record_path;
  bool dry_run = false;
  bool strict = false;

  // Space pieces as given on the command line; folded into cfg by finalize().
  std::string space_kind_flag;
  bool seq_or_token_given = false;
  bool flat_given = false;

  std::shared_ptr<mining::RecordingTransport> recorder;  // flushed before exit
};

void check_output_format(const std::string& fmt) {
  if (fmt != "json" && fmt != "csv" && fmt != "plain") {
    throw SchemaViolation("output format '" + fmt + "' is not one of json, csv, plain");
  }
}

json space_to_json(const LatentSpaceTag& s) {
  return {{"kind", std::string(to_string(s.kind))},
          {"seq_len", s.seq_len},
          {"token_dim", s.token_dim},
          {"flat_dim", s.flat_dim}};
}

json parse_json_file(const fs::path& path, const char* what) {
  json j = json::parse(store::read_file_bytes(path), nullptr, false);
  if (j.is_discarded()) {
    throw SchemaViolation(std::string(what) + " '" + path.string() + "' is not valid JSON");
  }
  return j;
}

void apply_config_file(RunConfig& cfg, const fs::path& path) {
  const json j = parse_json_file(path, "config file");
  if (!j.is_object()) throw SchemaViolation("config file must hold a JSON object");

  if (j.contains("solver")) {
    const auto& s = j["solver"];
    cfg.solver.lambda = s.value("lambda", cfg.solver.lambda);
    cfg.solver.rho = s.value("rho", cfg.solver.rho);
    cfg.solver.tol = s.value("tol", cfg.solver.tol);
    cfg.solver.max_sweeps = s.value("max_sweeps", cfg.solver.max_sweeps);
  }
  if (j.contains("client")) {
    const auto& c = j["client"];
    cfg.client.endpoint_url = c.value("endpoint_url", cfg.client.endpoint_url);
    cfg.client.model_name = c.value("model_name", cfg.client.model_name);
    cfg.client.api_key_env = c.value("api_key_env", cfg.client.api_key_env);
    cfg.client.max_retries = c.value("max_retries", cfg.client.max_retries);
    cfg.client.request_timeout = c.value("request_timeout", cfg.client.request_timeout);
    cfg.client.max_concurrent_requests =
        c.value("max_concurrent_requests", cfg.client.max_concurrent_requests);
  }
  if (j.contains("space")) {
    const auto& s = j["space"];
    if (s.contains("kind")) cfg.space.kind = space_kind_from_string(s["kind"].get<std::string>());
    cfg.space.seq_len = s.value("seq_len", cfg.space.seq_len);
    cfg.space.token_dim = s.value("token_dim", cfg.space.token_dim);
    if (s.contains("flat_dim")) {
      cfg.space.flat_dim = s["flat_dim"].get<std::size_t>();
    } else if (cfg.space.kind == SpaceKind::text_embedding) {
      cfg.space.flat_dim = cfg.space.seq_len * cfg.space.token_dim;
    }
    cfg.space.validate();
  }
  if (j.contains("paths")) {
    cfg.cache_dir = j["paths"].value("cache_dir", cfg.cache_dir);
  }
  cfg.report_k = j.value("report_k", cfg.report_k);
  cfg.output = j.value("output", cfg.output);
  check_output_format(cfg.output);
}

// Reconciles partial space overrides after flag parsing.
void finalize(CliContext& ctx) {
  if (!ctx.space_kind_flag.empty()) {
    ctx.cfg.space.kind = space_kind_from_string(ctx.space_kind_flag);
  }
  if (ctx.cfg.space.kind == SpaceKind::text_embedding) {
    if (ctx.seq_or_token_given && !ctx.flat_given) {
      ctx.cfg.space.flat_dim = ctx.cfg.space.seq_len * ctx.cfg.space.token_dim;
    }
  } else {
    ctx.cfg.space.seq_len = 0;
    ctx.cfg.space.token_dim = 0;
  }
  ctx.cfg.space.validate();
  ctx.cfg.solver.validate();
  check_output_format(ctx.cfg.output);
  if (!ctx.replay_path.empty() && !ctx.record_path.empty()) {
    throw Error(ErrorClass::usage, "--replay and --record are mutually exclusive");
  }
}

// ---------------------------------------------------------------------------
// Transport wiring.
// ---------------------------------------------------------------------------

// Stand-in for --dry-run: any attempt to reach the network is a bug.
class DryRunTransport : public mining::Transport {
 public:
  mining::HttpResponse post(const mining::HttpRequest&) override {
    throw TransportError("dry-run issued a network request");
  }
  bool live() const override { return false; }
};

std::shared_ptr<mining::Transport> build_transport(CliContext& ctx) {
  if (ctx.dry_run) return std::make_shared<DryRunTransport>();
  if (!ctx.replay_path.empty()) {
    return std::make_shared<mining::ReplayTransport>(ctx.replay_path);
  }
  auto live = mining::make_http_transport(ctx.cfg.client);
  if (!ctx.record_path.empty()) {
    ctx.recorder = std::make_shared<mining::RecordingTransport>(live, ctx.record_path);
    return ctx.recorder;
  }
  return live;
}

// Fixture replay is ordered and recording must stay replayable, so fan-out
// is serialized whenever a cassette is involved.
std::size_t fanout_limit(const CliContext& ctx) {
  if (!ctx.replay_path.empty() || !ctx.record_path.empty()) return 1;
  return static_cast<std::size_t>(ctx.cfg.client.max_concurrent_requests);
}

// ---------------------------------------------------------------------------
// Output helpers. JSON objects print with sorted keys, so all machine output
// is stable-ordered.
// ---------------------------------------------------------------------------

std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += "\"";
  return out;
}

void emit_json(const json& j) { std::cout << j.dump(2) << "\n"; }

void emit_list(const CliContext& ctx, const std::string& key,
               const std::vector<std::string>& items) {
  if (ctx.cfg.output == "json") {
    emit_json(json{{key, items}});
  } else if (ctx.cfg.output == "csv") {
    std::cout << key << "\n";
    for (const auto& item : items) std::cout << csv_quote(item) << "\n";
  } else {
    for (const auto& item : items) std::cout << item << "\n";
  }
}

json report_to_json(const CoefficientReport& rep) {
  json entries = json::array();
  for (const auto& e : rep.entries) {
    entries.push_back(
        {{"name", e.name}, {"coefficient", e.coefficient}, {"magnitude", e.magnitude}});
  }
  return entries;
}

void emit_report(const CliContext& ctx, const CoefficientReport& rep, const json& stats) {
  if (ctx.cfg.output == "json") {
    json out = {{"entries", report_to_json(rep)}, {"k", rep.k}};
    for (auto it = stats.begin(); it != stats.end(); ++it) out[it.key()] = it.value();
    emit_json(out);
  } else if (ctx.cfg.output == "csv") {
    std::cout << "name,coefficient,magnitude\n";
    for (const auto& e : rep.entries) {
      std::cout << csv_quote(e.name) << "," << e.coefficient << "," << e.magnitude << "\n";
    }
    for (auto it = stats.begin(); it != stats.end(); ++it) {
      std::cerr << it.key() << ": " << it.value().dump() << "\n";
    }
  } else {
    for (auto it = stats.begin(); it != stats.end(); ++it) {
      std::cout << it.key() << ": " << it.value().dump() << "\n";
    }
    std::cout << "top coefficients:\n";
    for (const auto& e : rep.entries) {
      std::cout << "  " << e.name << "  " << e.coefficient << "\n";
    }
  }
}

std::string sanitize_filename(const std::string& name) {
  std::string out;
  for (char c : name) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                    (c >= '0' && c <= '9') || c == '-' || c == '_';
    out.push_back(ok ? c : '_');
  }
  if (out.empty()) out = "concept";
  return out;
}

// ---------------------------------------------------------------------------
// File schemas owned by the CLI: edit tasks, concept lists, decompositions.
// ---------------------------------------------------------------------------

mining::EditTask load_task(const fs::path& path) {
  const json j = parse_json_file(path, "task file");
  if (!j.is_object() || !j.contains("source_prompt") || !j["source_prompt"].is_string() ||
      !j.contains("target_prompt") || !j["target_prompt"].is_string()) {
    throw SchemaViolation("task file needs string source_prompt and target_prompt");
  }
  mining::EditTask task;
  task.source_prompt = j["source_prompt"].get<std::string>();
  task.target_prompt = j["target_prompt"].get<std::string>();
  task.source_concept = j.value("source_concept", std::string());
  task.target_concept = j.value("target_concept", std::string());
  task.image_path = j.value("image_path", std::string());
  return task;
}

std::vector<std::string> load_concept_list(const fs::path& path) {
  json j = parse_json_file(path, "concepts file");
  if (j.is_object() && j.contains("concepts")) j = j["concepts"];
  if (!j.is_array()) {
    throw SchemaViolation("concepts file must be a JSON array or an object with 'concepts'");
  }
  std::vector<std::string> out;
  for (const auto& c : j) {
    if (!c.is_string()) throw SchemaViolation("concept entry is not a string");
    const std::string name = normalize_whitespace(c.get<std::string>());
    if (name.empty()) throw SchemaViolation("concept entry is empty");
    out.push_back(name);
  }
  if (out.empty()) throw SchemaViolation("concepts file lists no concepts");
  return out;
}

struct StoredDecomposition {
  std::vector<std::string> concepts;
  std::vector<double> weights;
  std::vector<float> source;
  std::vector<float> residual;
  LatentSpaceTag space;
  SolveStats stats;
  std::string dict_manifest;
};

// Sidecar names derived from the decomposition path: x.json -> x.source.clan
// and x.residual.clan.
fs::path sidecar(const fs::path& decomp_path, const char* which) {
  fs::path base = decomp_path;
  if (base.extension() == ".json") base.replace_extension();
  base += std::string(".") + which + ".clan";
  return base;
}

void save_decomposition(const Decomposition& dec, const fs::path& path,
                        const std::string& dict_manifest) {
  const fs::path source_path = sidecar(path, "source");
  const fs::path residual_path = sidecar(path, "residual");
  store::write_matrix(DenseMatrix(1, dec.source.size(), dec.source), source_path);
  store::write_matrix(DenseMatrix(1, dec.residual.size(), dec.residual), residual_path);

  const json j = {
      {"concepts", dec.dictionary->names()},
      {"weights", dec.weights},
      {"source_file", source_path.filename().string()},
      {"residual_file", residual_path.filename().string()},
      {"space", space_to_json(dec.dictionary->space())},
      {"dict_manifest", dict_manifest},
      {"stats",
       {{"converged", dec.stats.converged},
        {"sweeps_used", dec.stats.sweeps_used},
        {"objective", dec.stats.objective},
        {"solve_seconds", dec.stats.solve_seconds}}},
  };
  store::atomic_write_file(path, j.dump(2) + "\n");
}

StoredDecomposition load_decomposition(const fs::path& path) {
  const json j = parse_json_file(path, "decomposition file");
  if (!j.is_object() || !j.contains("concepts") || !j["concepts"].is_array() ||
      !j.contains("weights") || !j["weights"].is_array() || !j.contains("source_file") ||
      !j.contains("residual_file") || !j.contains("space")) {
    throw SchemaViolation(
        "decomposition file needs concepts, weights, source_file, residual_file, space");
  }
  StoredDecomposition out;
  for (const auto& c : j["concepts"]) out.concepts.push_back(c.get<std::string>());
  for (const auto& w : j["weights"]) {
    if (!w.is_number()) throw SchemaViolation("weight entry is not a number");
    out.weights.push_back(w.get<double>());
  }
  if (out.concepts.size() != out.weights.size()) {
    throw SchemaViolation("decomposition file has " + std::to_string(out.concepts.size()) +
                          " concepts for " + std::to_string(out.weights.size()) + " weights");
  }
  out.space.kind = space_kind_from_string(j["space"].value("kind", std::string("score")));
  out.space.seq_len = j["space"].value("seq_len", std::size_t{0});
  out.space.token_dim = j["space"].value("token_dim", std::size_t{0});
  out.space.flat_dim = j["space"].value("flat_dim", std::size_t{0});
  out.space.validate();
  out.dict_manifest = j.value("dict_manifest", std::string());
  if (j.contains("stats")) {
    const auto& s = j["stats"];
    out.stats.converged = s.value("converged", false);
    out.stats.sweeps_used = s.value("sweeps_used", std::size_t{0});
    out.stats.objective = s.value("objective", 0.0);
    out.stats.solve_seconds = s.value("solve_seconds", 0.0);
  }

  const fs::path dir = path.parent_path();
  auto resolve = [&dir](const std::string& name) {
    fs::path p(name);
    return p.is_relative() && !dir.empty() ? dir / p : p;
  };
  const DenseMatrix source =
      store::read_matrix(resolve(j["source_file"].get<std::string>()));
  const DenseMatrix residual =
      store::read_matrix(resolve(j["residual_file"].get<std::string>()));
  if (source.rows() != 1 || residual.rows() != 1 || source.cols() != out.space.flat_dim ||
      residual.cols() != out.space.flat_dim) {
    throw SchemaViolation("decomposition sidecars must be 1 x " +
                          std::to_string(out.space.flat_dim) + " matrices");
  }
  out.source.assign(source.data().begin(), source.data().end());
  out.residual.assign(residual.data().begin(), residual.data().end());
  return out;
}

// Rehydrates a full Decomposition, loading the dictionary from `dict_flag`
// or the manifest recorded in the file.
Decomposition rehydrate(const StoredDecomposition& stored, const fs::path& decomp_path,
                        const std::string& dict_flag) {
  std::string manifest = dict_flag.empty() ? stored.dict_manifest : dict_flag;
  if (manifest.empty()) {
    throw ValidationFailed("no dictionary manifest recorded; pass --dict");
  }
  fs::path manifest_path(manifest);
  if (dict_flag.empty() && manifest_path.is_relative()) {
    // Paths recorded in the file are relative to the file itself.
    manifest_path = decomp_path.parent_path() / manifest_path;
  }
  auto dict = store::load_dictionary(manifest_path);
  if (dict->names() != stored.concepts) {
    throw ValidationFailed("dictionary '" + manifest_path.string() +
                           "' does not list the same concepts as the decomposition");
  }
  if (dict->space() != stored.space) {
    throw SpaceMismatch("dictionary space differs from the decomposition's space");
  }
  Decomposition dec;
  dec.dictionary = std::move(dict);
  dec.source = stored.source;
  dec.weights = stored.weights;
  dec.residual = stored.residual;
  dec.stats = stored.stats;
  return dec;
}

std::vector<double> parse_grid(const std::string& grid) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos <= grid.size()) {
    const std::size_t comma = std::min(grid.find(',', pos), grid.size());
    const std::string piece = grid.substr(pos, comma - pos);
    try {
      std::size_t used = 0;
      const double value = std::stod(piece, &used);
      if (used != piece.size()) throw std::invalid_argument(piece);
      out.push_back(value);
    } catch (const std::exception&) {
      throw Error(ErrorClass::usage, "--grid entry '" + piece + "' is not a number");
    }
    pos = comma + 1;
  }
  if (out.empty()) throw Error(ErrorClass::usage, "--grid lists no values");
  return out;
}

// Target vector for an edit: an explicit 1 x d matrix file, a dictionary
// column, or (for removal with no explicit target) the null concept.
ConceptVector resolve_target(const ConceptDictionary& dict, EditKind kind,
                             const std::string& target_concept,
                             const std::string& target_matrix) {
  if (!target_matrix.empty()) {
    if (target_concept.empty()) {
      throw ValidationFailed("--target-concept names the vector given via --target-matrix");
    }
    const DenseMatrix m = store::read_matrix(target_matrix);
    if (m.rows() != 1 || m.cols() != dict.dim()) {
      throw SpaceMismatch("--target-matrix must be 1 x " + std::to_string(dict.dim()));
    }
    ConceptVector cv;
    cv.name = target_concept;
    cv.vector.assign(m.data().begin(), m.data().end());
    cv.space = dict.space();
    return cv;
  }

  const std::string name = target_concept.empty() && kind == EditKind::remove
                               ? std::string(kNullConceptName)
                               : target_concept;
  if (name.empty()) throw ValidationFailed("--target-concept is required");
  if (const auto idx = dict.index_of(name)) {
    ConceptVector cv;
    cv.name = name;
    cv.vector = dict.column(*idx);
    cv.read_method = dict.read_methods()[*idx];
    cv.space = dict.space();
    return cv;
  }
  if (name == kNullConceptName) {
    // Removal against a dictionary without a stored null atom: an all-zero
    // null vector, the one atom allowed to be zero.
    return null_concept(dict.space(), std::vector<float>(dict.dim(), 0.0f));
  }
  throw UnknownConcept("target concept '" + name +
                       "' is not a dictionary column; pass --target-matrix to supply it");
}

void print_dry_run(const std::vector<std::string>& bodies) {
  json out = json::array();
  for (const auto& b : bodies) out.push_back(json::parse(b));
  std::cout << out.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Command handlers.
// ---------------------------------------------------------------------------

void cmd_concepts_parse(CliContext& ctx, const std::string& task_file,
                        const std::string& out_file) {
  finalize(ctx);
  const mining::EditTask task = load_task(task_file);
  mining::MiningClient client(ctx.cfg.client, build_transport(ctx));
  if (ctx.dry_run) {
    print_dry_run({client.build_parse_request(task)});
    return;
  }
  const auto response = client.parse_concepts(task);
  if (ctx.recorder) ctx.recorder->flush();
  if (!out_file.empty()) {
    store::atomic_write_file(out_file, json{{"concepts", response.concepts}}.dump(2) + "\n");
  }
  emit_list(ctx, "concepts", response.concepts);
}

void cmd_concepts_rewrite(CliContext& ctx, const std::string& task_file,
                          const std::string& out_file) {
  finalize(ctx);
  const mining::EditTask task = load_task(task_file);
  mining::MiningClient client(ctx.cfg.client, build_transport(ctx));
  if (ctx.dry_run) {
    print_dry_run({client.build_rewrite_request(task)});
    return;
  }
  const mining::EditTask rewritten = client.rewrite_for_insertion(task);
  if (ctx.recorder) ctx.recorder->flush();
  const json out = {{"source_prompt", rewritten.source_prompt},
                    {"target_prompt", rewritten.target_prompt},
                    {"source_concept", rewritten.source_concept},
                    {"target_concept", rewritten.target_concept},
                    {"image_path", rewritten.image_path}};
  if (!out_file.empty()) store::atomic_write_file(out_file, out.dump(2) + "\n");
  if (ctx.cfg.output == "json") {
    emit_json(out);
  } else {
    std::cout << rewritten.source_prompt << "\n";
  }
}

void cmd_stimuli_gen(CliContext& ctx, const std::string& concepts_file,
                     const std::string& out_file) {
  finalize(ctx);
  const std::vector<std::string> concepts = load_concept_list(concepts_file);
  mining::MiningClient client(ctx.cfg.client, build_transport(ctx));
  if (ctx.dry_run) {
    std::vector<std::string> bodies;
    for (const auto& c : concepts) bodies.push_back(client.build_stimuli_request(c));
    print_dry_run(bodies);
    return;
  }

  store::ConceptDataset dataset;
  dataset.records.resize(concepts.size());
  mining::run_bounded(fanout_limit(ctx), concepts.size(), [&](std::size_t i) {
    auto stimuli = client.synthesize_stimuli(concepts[i]);
    dataset.records[i] = {stimuli.name, std::move(stimuli.stimuli)};
  });
  store::write_dataset(dataset, out_file);
  if (ctx.recorder) ctx.recorder->flush();

  std::vector<std::string> summary;
  for (const auto& rec : dataset.records) {
    summary.push_back(rec.name + " (" + std::to_string(rec.stimuli.size()) + " stimuli)");
  }
  emit_list(ctx, "generated", summary);
  std::cerr << "wrote " << out_file << "\n";
}

void cmd_embed(CliContext& ctx, const std::string& dataset_file, const std::string& out_dir) {
  finalize(ctx);
  const store::ConceptDataset dataset = store::read_dataset(dataset_file);
  mining::MiningClient client(ctx.cfg.client, build_transport(ctx));
  if (ctx.dry_run) {
    std::vector<std::string> bodies;
    for (const auto& rec : dataset.records) {
      bodies.push_back(client.build_embed_request(rec.stimuli));
    }
    print_dry_run(bodies);
    return;
  }

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create '" + out_dir + "'");
  std::unique_ptr<store::EmbeddingCache> cache;
  if (!ctx.cfg.cache_dir.empty()) {
    cache = std::make_unique<store::EmbeddingCache>(ctx.cfg.cache_dir);
  }

  std::vector<json> index(dataset.records.size());
  mining::run_bounded(fanout_limit(ctx), dataset.records.size(), [&](std::size_t i) {
    const auto& rec = dataset.records[i];
    const DenseMatrix m = client.embed_texts(rec.stimuli, cache.get());
    const std::string file =
        std::to_string(i) + "_" + sanitize_filename(rec.name) + ".clan";
    store::write_matrix(m, fs::path(out_dir) / file);
    index[i] = {{"concept", rec.name},
                {"file", file},
                {"rows", m.rows()},
                {"cols", m.cols()}};
  });
  if (ctx.recorder) ctx.recorder->flush();

  json index_json = {{"entries", index}};
  store::atomic_write_file(fs::path(out_dir) / "index.json", index_json.dump(2) + "\n");

  std::vector<std::string> summary;
  for (const auto& e : index) {
    summary.push_back(e["concept"].get<std::string>() + " -> " + e["file"].get<std::string>() +
                      " (" + std::to_string(e["rows"].get<std::size_t>()) + "x" +
                      std::to_string(e["cols"].get<std::size_t>()) + ")");
  }
  emit_list(ctx, "embedded", summary);
}

void cmd_dict_build(CliContext& ctx, const std::string& dataset_file, const std::string& method,
                    const std::string& out_manifest, bool normalize, bool with_null) {
  finalize(ctx);
  const store::ConceptDataset dataset = store::read_dataset(dataset_file);
  const ReadMethod read_method = read_method_from_string(method);
  mining::MiningClient client(ctx.cfg.client, build_transport(ctx));
  if (ctx.dry_run) {
    std::vector<std::string> bodies;
    for (const auto& rec : dataset.records) {
      bodies.push_back(client.build_embed_request(rec.stimuli));
    }
    if (with_null) {
      const std::vector<std::string> empty{std::string()};
      bodies.push_back(client.build_embed_request(empty));
    }
    print_dry_run(bodies);
    return;
  }

  std::unique_ptr<store::EmbeddingCache> cache;
  if (!ctx.cfg.cache_dir.empty()) {
    cache = std::make_unique<store::EmbeddingCache>(ctx.cfg.cache_dir);
  }

  std::vector<ConceptVector> atoms(dataset.records.size());
  mining::run_bounded(fanout_limit(ctx), dataset.records.size(), [&](std::size_t i) {
    const auto& rec = dataset.records[i];
    const DenseMatrix embeddings = client.embed_texts(rec.stimuli, cache.get());
    atoms[i] = rep_read(embeddings, read_method, rec.name, ctx.cfg.space);
  });
  if (with_null) {
    const std::vector<std::string> empty{std::string()};
    const DenseMatrix m = client.embed_texts(empty, cache.get());
    atoms.push_back(null_concept(ctx.cfg.space, m.row(0)));
  }
  if (ctx.recorder) ctx.recorder->flush();

  const ConceptDictionary dict = ConceptDictionary::assemble(atoms, normalize);
  fs::path matrix_name(out_manifest);
  matrix_name = matrix_name.filename().replace_extension(".clan");
  const auto manifest = store::save_dictionary(dict, out_manifest, matrix_name.string());

  if (ctx.cfg.output == "json") {
    emit_json(json{{"manifest", out_manifest},
                   {"matrix_file", manifest.matrix_file},
                   {"concepts", manifest.names},
                   {"content_hash", manifest.content_hash}});
  } else {
    std::cout << "dictionary: " << dict.size() << " atoms, dim " << dict.dim() << ", written to "
              << out_manifest << "\n";
  }
}

void cmd_decompose(CliContext& ctx, const std::string& source_file, const std::string& dict_file,
                   const std::string& out_file) {
  finalize(ctx);
  const DenseMatrix source = store::read_matrix(source_file);
  if (source.rows() != 1) {
    throw ValidationFailed("source matrix must be 1 x d (one flattened latent), got " +
                           std::to_string(source.rows()) + " rows");
  }
  const auto dict = store::load_dictionary(dict_file);
  const Decomposition dec = decompose(source.row(0), dict, ctx.cfg.solver);

  // The solve itself is timed no matter the output format.
  std::cerr << "solve time: " << dec.stats.solve_seconds << " s\n";
  if (!dec.stats.converged) {
    if (ctx.strict) {
      throw NotConverged("no convergence within " + std::to_string(ctx.cfg.solver.max_sweeps) +
                         " sweeps");
    }
    warn("solver did not converge within " + std::to_string(ctx.cfg.solver.max_sweeps) +
         " sweeps");
  }

  if (!out_file.empty()) save_decomposition(dec, out_file, dict_file);

  const double residual_norm =
      std::sqrt(kernels::squared_norm(std::span<const float>(dec.residual)));
  const std::size_t k = std::min<std::size_t>(ctx.cfg.report_k, dict->size());
  const CoefficientReport report = top_k_report(dec, k);
  const json stats = {{"converged", dec.stats.converged},
                      {"sweeps_used", dec.stats.sweeps_used},
                      {"objective", dec.stats.objective},
                      {"residual_norm", residual_norm},
                      {"solve_seconds", dec.stats.solve_seconds}};
  emit_report(ctx, report, stats);
}

void cmd_edit(CliContext& ctx, const std::string& decomp_file, const std::string& dict_flag,
              const std::string& kind_str, const std::string& source_concept,
              const std::string& target_concept, const std::string& target_matrix,
              const std::string& out_file) {
  finalize(ctx);
  const StoredDecomposition stored = load_decomposition(decomp_file);
  const Decomposition dec = rehydrate(stored, decomp_file, dict_flag);
  const EditKind kind = edit_kind_from_string(kind_str);

  const ConceptVector target =
      resolve_target(*dec.dictionary, kind, target_concept, target_matrix);
  const EditRequest edit = make_edit(*dec.dictionary, kind, source_concept, target);
  const std::vector<float> edited = transplant(dec, edit);
  store::write_matrix(DenseMatrix(1, edited.size(), edited), out_file);

  const std::size_t s = *dec.dictionary->index_of(edit.source_concept);
  if (ctx.cfg.output == "json") {
    emit_json(json{{"kind", std::string(to_string(kind))},
                   {"source_concept", edit.source_concept},
                   {"target_concept", edit.target_concept},
                   {"source_coefficient", dec.weights[s]},
                   {"out", out_file}});
  } else {
    std::cout << to_string(kind) << " '" << edit.source_concept << "' -> '"
              << edit.target_concept << "' (w* = " << dec.weights[s] << "), wrote " << out_file
              << "\n";
  }
}

void cmd_sweep(CliContext& ctx, const std::string& decomp_file, const std::string& dict_flag,
               const std::string& kind_str, const std::string& source_concept,
               const std::string& target_concept, const std::string& target_matrix,
               const std::string& grid_str, const std::string& out_prefix) {
  finalize(ctx);
  const StoredDecomposition stored = load_decomposition(decomp_file);
  const Decomposition dec = rehydrate(stored, decomp_file, dict_flag);
  const EditKind kind = edit_kind_from_string(kind_str);
  const std::vector<double> grid = parse_grid(grid_str);

  const ConceptVector target =
      resolve_target(*dec.dictionary, kind, target_concept, target_matrix);
  const EditRequest edit = make_edit(*dec.dictionary, kind, source_concept, target);
  const auto points = strength_sweep(dec, edit, grid);

  json entries = json::array();
  for (std::size_t i = 0; i < points.size(); ++i) {
    const std::string file = out_prefix + std::to_string(i) + ".clan";
    store::write_matrix(DenseMatrix(1, points[i].size(), points[i]), file);
    entries.push_back({{"alpha", grid[i]}, {"file", file}});
  }
  if (ctx.cfg.output == "json") {
    emit_json(json{{"points", entries}});
  } else {
    for (const auto& e : entries) {
      std::cout << "alpha " << e["alpha"].get<double>() << " -> "
                << e["file"].get<std::string>() << "\n";
    }
  }
}

void cmd_report(CliContext& ctx, const std::string& decomp_file) {
  finalize(ctx);
  const StoredDecomposition stored = load_decomposition(decomp_file);
  const CoefficientReport report =
      rank_coefficients(stored.weights, stored.concepts, ctx.cfg.report_k);
  const json stats = {{"converged", stored.stats.converged},
                      {"objective", stored.stats.objective},
                      {"solve_seconds", stored.stats.solve_seconds}};
  emit_report(ctx, report, stats);
}

std::string prescan_config(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--config" && i + 1 < argc) return argv[i + 1];
    if (arg.rfind("--config=", 0) == 0) return arg.substr(9);
  }
  return {};
}

}  // namespace

int main(int argc, char** argv) {
  CliContext ctx;

  try {
    const std::string config_path = prescan_config(argc, argv);
    if (!config_path.empty()) apply_config_file(ctx.cfg, config_path);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.error_class());
  }

  CLI::App app{"concept-transplant pipeline"};
  app.fallthrough();
  std::string config_path_opt;
  app.add_option("--config", config_path_opt, "JSON config file (flags take precedence)");
  app.add_option("--lambda", ctx.cfg.solver.lambda, "sparsity weight");
  app.add_option("--rho", ctx.cfg.solver.rho, "L1 share of the penalty (1 = pure L1)");
  app.add_option("--tol", ctx.cfg.solver.tol, "coordinate-change convergence tolerance");
  app.add_option("--max-sweeps", ctx.cfg.solver.max_sweeps, "sweep cap");
  app.add_option("--endpoint", ctx.cfg.client.endpoint_url, "chat-completions service base URL");
  app.add_option("--model", ctx.cfg.client.model_name, "model name sent with requests");
  app.add_option("--api-key-env", ctx.cfg.client.api_key_env,
                 "environment variable holding the API key (empty = no auth)");
  app.add_option("--max-retries", ctx.cfg.client.max_retries, "retry budget per request");
  app.add_option("--timeout", ctx.cfg.client.request_timeout, "per-request timeout in seconds");
  app.add_option("--max-concurrent", ctx.cfg.client.max_concurrent_requests,
                 "parallel request cap");
  app.add_option("--space-kind", ctx.space_kind_flag, "latent space kind")
      ->check(CLI::IsMember({"text_embedding", "score"}));
  app.add_option("--seq-len", ctx.cfg.space.seq_len, "token positions per latent")
      ->each([&](const std::string&) { ctx.seq_or_token_given = true; });
  app.add_option("--token-dim", ctx.cfg.space.token_dim, "embedding width per token")
      ->each([&](const std::string&) { ctx.seq_or_token_given = true; });
  app.add_option("--flat-dim", ctx.cfg.space.flat_dim, "flattened latent dimension")
      ->each([&](const std::string&) { ctx.flat_given = true; });
  app.add_option("--cache-dir", ctx.cfg.cache_dir, "embedding cache directory");
  app.add_option("-k,--k", ctx.cfg.report_k, "coefficients to report");
  app.add_option("-o,--output", ctx.cfg.output, "output format")
      ->check(CLI::IsMember({"json", "csv", "plain"}));
  app.add_flag("--dry-run", ctx.dry_run, "validate and print requests, no network");
  app.add_option("--replay", ctx.replay_path, "serve responses from a recorded cassette");
  app.add_option("--record", ctx.record_path, "record live responses to a cassette");
  app.add_flag("--strict", ctx.strict, "non-convergence becomes a numeric failure (exit 4)");

  app.require_subcommand(1);

  // concepts parse / concepts rewrite
  auto* concepts = app.add_subcommand("concepts", "concept mining against the VLM");
  concepts->require_subcommand(1);
  concepts->fallthrough();
  std::string task_file, concepts_out;
  auto* parse_cmd = concepts->add_subcommand("parse", "parse a task into a concept list");
  parse_cmd->fallthrough();
  parse_cmd->add_option("--task", task_file, "task JSON file")->required();
  parse_cmd->add_option("--out", concepts_out, "write the concept list to this file");
  parse_cmd->callback([&] { cmd_concepts_parse(ctx, task_file, concepts_out); });

  std::string rewrite_task_file, rewrite_out;
  auto* rewrite_cmd =
      concepts->add_subcommand("rewrite", "rewrite an insertion task around a counterpart");
  rewrite_cmd->fallthrough();
  rewrite_cmd->add_option("--task", rewrite_task_file, "task JSON file")->required();
  rewrite_cmd->add_option("--out", rewrite_out, "write the rewritten task to this file");
  rewrite_cmd->callback([&] { cmd_concepts_rewrite(ctx, rewrite_task_file, rewrite_out); });

  // stimuli gen
  auto* stimuli = app.add_subcommand("stimuli", "stimulus synthesis against the LLM");
  stimuli->require_subcommand(1);
  stimuli->fallthrough();
  std::string stimuli_concepts_file, stimuli_out = "dataset.json";
  auto* gen_cmd = stimuli->add_subcommand("gen", "synthesize stimuli for every concept");
  gen_cmd->fallthrough();
  gen_cmd->add_option("--concepts", stimuli_concepts_file, "concept list JSON file")->required();
  gen_cmd->add_option("--out", stimuli_out, "dataset file to write");
  gen_cmd->callback([&] { cmd_stimuli_gen(ctx, stimuli_concepts_file, stimuli_out); });

  // embed
  std::string embed_dataset, embed_out_dir = "embeddings";
  auto* embed_cmd = app.add_subcommand("embed", "embed every stimulus via the sidecar or cache");
  embed_cmd->fallthrough();
  embed_cmd->add_option("--dataset", embed_dataset, "dataset JSON file")->required();
  embed_cmd->add_option("--out-dir", embed_out_dir, "directory for per-concept matrices");
  embed_cmd->callback([&] { cmd_embed(ctx, embed_dataset, embed_out_dir); });

  // dict build
  auto* dict = app.add_subcommand("dict", "dictionary assembly");
  dict->require_subcommand(1);
  dict->fallthrough();
  std::string dict_dataset, dict_method = "avg", dict_out = "dictionary.json";
  bool dict_normalize = true, dict_with_null = false;
  auto* build_cmd = dict->add_subcommand("build", "read concepts and assemble the dictionary");
  build_cmd->fallthrough();
  build_cmd->add_option("--dataset", dict_dataset, "dataset JSON file")->required();
  build_cmd->add_option("--method", dict_method, "representation reading method")
      ->check(CLI::IsMember({"avg", "pca"}));
  build_cmd->add_option("--out", dict_out, "manifest file to write");
  build_cmd->add_flag("--normalize,!--no-normalize", dict_normalize,
                      "scale atoms to unit L2 norm (default on)");
  build_cmd->add_flag("--with-null", dict_with_null,
                      "append the null concept read from the empty string");
  build_cmd->callback(
      [&] { cmd_dict_build(ctx, dict_dataset, dict_method, dict_out, dict_normalize,
                           dict_with_null); });

  // decompose
  std::string dec_source, dec_dict, dec_out = "decomp.json";
  auto* decompose_cmd = app.add_subcommand("decompose", "solve sparse coefficients for a latent");
  decompose_cmd->fallthrough();
  decompose_cmd->add_option("--source", dec_source, "1 x d source matrix file")->required();
  decompose_cmd->add_option("--dict", dec_dict, "dictionary manifest")->required();
  decompose_cmd->add_option("--out", dec_out, "decomposition file to write (empty = none)");
  decompose_cmd->callback([&] { cmd_decompose(ctx, dec_source, dec_dict, dec_out); });

  // edit
  std::string edit_decomp, edit_dict, edit_kind = "replace", edit_source, edit_target,
              edit_target_matrix, edit_out = "edited.clan";
  auto* edit_cmd = app.add_subcommand("edit", "transplant a concept in a decomposition");
  edit_cmd->fallthrough();
  edit_cmd->add_option("--decomp", edit_decomp, "decomposition JSON file")->required();
  edit_cmd->add_option("--dict", edit_dict, "dictionary manifest (default: recorded one)");
  edit_cmd->add_option("--kind", edit_kind, "edit kind")
      ->check(CLI::IsMember({"replace", "add", "remove"}));
  edit_cmd->add_option("--source-concept", edit_source, "dictionary column to swap out")
      ->required();
  edit_cmd->add_option("--target-concept", edit_target, "target concept name");
  edit_cmd->add_option("--target-matrix", edit_target_matrix,
                       "1 x d matrix file holding an out-of-dictionary target");
  edit_cmd->add_option("--out", edit_out, "edited latent matrix file");
  edit_cmd->callback([&] {
    cmd_edit(ctx, edit_decomp, edit_dict, edit_kind, edit_source, edit_target,
             edit_target_matrix, edit_out);
  });

  // sweep
  std::string sweep_decomp, sweep_dict, sweep_kind = "replace", sweep_source, sweep_target,
              sweep_target_matrix, sweep_grid, sweep_prefix = "sweep_";
  auto* sweep_cmd = app.add_subcommand("sweep", "edited latents over a strength grid");
  sweep_cmd->fallthrough();
  sweep_cmd->add_option("--decomp", sweep_decomp, "decomposition JSON file")->required();
  sweep_cmd->add_option("--dict", sweep_dict, "dictionary manifest (default: recorded one)");
  sweep_cmd->add_option("--kind", sweep_kind, "edit kind")
      ->check(CLI::IsMember({"replace", "add", "remove"}));
  sweep_cmd->add_option("--source-concept", sweep_source, "dictionary column to swap out")
      ->required();
  sweep_cmd->add_option("--target-concept", sweep_target, "target concept name");
  sweep_cmd->add_option("--target-matrix", sweep_target_matrix,
                        "1 x d matrix file holding an out-of-dictionary target");
  sweep_cmd->add_option("--grid", sweep_grid, "comma-separated strengths, e.g. 0,0.5,1")
      ->required();
  sweep_cmd->add_option("--out-prefix", sweep_prefix, "output file prefix");
  sweep_cmd->callback([&] {
    cmd_sweep(ctx, sweep_decomp, sweep_dict, sweep_kind, sweep_source, sweep_target,
              sweep_target_matrix, sweep_grid, sweep_prefix);
  });

  // report
  std::string report_decomp;
  auto* report_cmd = app.add_subcommand("report", "ranked coefficients of a decomposition");
  report_cmd->fallthrough();
  report_cmd->add_option("--decomp", report_decomp, "decomposition JSON file")->required();
  report_cmd->callback([&] { cmd_report(ctx, report_decomp); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.error_class());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
