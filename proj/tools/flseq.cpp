// Copyright 2026 The flseq Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// flseq: one subcommand per pipeline stage.
//
//   preprocess  pairs (or clean sources with --inject) -> SG dataset
//   train       SG dataset -> model file (tiny-lm or memorize)
//   generate    SG dataset + model/endpoint -> candidates
//   evaluate    candidates + pairs -> Top-N report (+ CSV)
//   sbfl, mbfl  coverage / kill matrices -> suspiciousness ranking
//   split       id list -> 8:1:1 or k-fold assignment
//   report      several run reports -> mean of the best three
//   replay      re-run the command recorded in a manifest
//
// Exit codes: 0 success, 1 operational failure, 2 usage or input error.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "CLI11.hpp"
#include "flseq/flseq.hpp"

namespace {

using namespace flseq;

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::set<LineNumber> parse_line_spec(const std::string& spec) {
  std::set<LineNumber> lines;
  std::stringstream ss(spec);
  std::string part;
  while (std::getline(ss, part, ',')) {
    const auto t = text::trim(part);
    if (t.empty()) continue;
    const auto dash = t.find('-');
    const auto lo = text::parse_decimal(t.substr(0, dash));
    const auto hi = dash == std::string_view::npos ? lo : text::parse_decimal(t.substr(dash + 1));
    if (!lo || !hi || *lo < 1 || *hi < *lo) throw UsageError("--function-lines: bad range '" + part + "'");
    for (auto l = *lo; l <= *hi; ++l) lines.insert(static_cast<LineNumber>(l));
  }
  return lines;
}

std::vector<std::string> read_id_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path + "'");
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    const auto t = text::trim(line);
    if (!t.empty()) ids.emplace_back(t);
  }
  return ids;
}

struct CleanSource {
  std::string id;
  std::string source;
  std::string language;
};

/// Clean-function records for --inject: {id, source, language?} per line.
std::vector<CleanSource> read_clean_sources(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path + "'");
  std::vector<CleanSource> out;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (text::trim(raw).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(raw);
      out.push_back({j.at("id").get<std::string>(), text::normalize_newlines(j.at("source").get<std::string>()),
                     j.value("language", std::string())});
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::MalformedRecord,
                  "clean-source record at line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::string to_lines(const std::vector<SGExample>& examples) {
  std::ostringstream out;
  write_sg_dataset(out, examples);
  return out.str();
}

// ---------------------------------------------------------------------------

struct PreprocessArgs {
  std::string pairs, out, emit_pairs, mutators = "arith-op-swap,relational-op-swap,constant-perturb,boolean-negate";
  std::string variant = "numbered";
  bool inject = false;
  std::uint64_t seed = 0;
  std::size_t count = 0;
};

int cmd_preprocess(const PreprocessArgs& a, RunManifest& manifest) {
  const auto variant = parse_sg_variant(a.variant);
  if (!variant) throw UsageError("--variant: expected numbered, unnumbered or number-only");
  std::vector<FunctionPair> pairs;
  if (a.inject) {
    const auto mutators = parse_mutator_list(a.mutators);
    if (mutators.empty()) throw UsageError("--mutators: empty list");
    const auto sources = read_clean_sources(a.pairs);
    if (sources.empty()) throw Error(ErrorKind::MalformedRecord, "no clean sources in '" + a.pairs + "'");
    const std::size_t count = a.count ? a.count : sources.size();
    std::size_t no_site = 0;
    for (std::size_t i = 0; i < count; ++i) {
      const auto& src = sources[i % sources.size()];
      const auto id = count == sources.size() ? src.id : src.id + "-" + std::to_string(i);
      try {
        pairs.push_back(inject_fault(src.source, mutators, mix_seed(a.seed, i), id, src.language));
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::NoApplicableSite) throw;
        std::cerr << "skip " << id << ": " << e.what() << '\n';
        ++no_site;
      }
    }
    manifest.results["skipped_no_site"] = no_site;
  } else {
    auto ingested = ingest_pairs(a.pairs);
    for (const auto& s : ingested.skipped)
      std::cerr << "skip record at line " << s.record_line << " (" << s.id << "): " << s.reason << '\n';
    manifest.results["skipped"] = ingested.skipped.size();
    pairs = std::move(ingested.pairs);
  }

  std::vector<SGExample> examples;
  for (const auto& p : pairs)
    for (auto& ex : build_sg_examples(p, *variant)) examples.push_back(std::move(ex));

  write_file_atomic(a.out, to_lines(examples));
  manifest.outputs.push_back(a.out);
  if (!a.emit_pairs.empty()) {
    std::ostringstream out;
    write_pairs(out, pairs);
    write_file_atomic(a.emit_pairs, out.str());
    manifest.outputs.push_back(a.emit_pairs);
  }
  manifest.results["pairs"] = pairs.size();
  manifest.results["examples"] = examples.size();
  std::cerr << pairs.size() << " pairs -> " << examples.size() << " SG examples\n";
  return 0;
}

struct TrainArgs {
  std::string data, config, out, backend = "tiny-lm";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
};

int cmd_train(const TrainArgs& a, RunManifest& manifest) {
  const auto examples = read_sg_dataset(a.data);
  std::ostringstream out(std::ios::binary);
  if (a.backend == "memorize") {
    MemorizingOracle oracle(examples);
    save_model(out, oracle);
    manifest.config = {{"backend", "memorize"}};
  } else if (a.backend == "tiny-lm") {
    TinyLMConfig config;
    if (!a.config.empty()) config = read_json_file(a.config).get<TinyLMConfig>();
    if (a.seed) config.seed = *a.seed;
    if (a.epochs) config.epochs = *a.epochs;
    const auto result = tiny_lm_train(examples, config);
    save_model(out, result.model);
    manifest.config = config;
    manifest.seed = config.seed;
    manifest.results["epoch_losses"] = result.epoch_losses;
    manifest.results["rejected_too_long"] = result.rejected;
    for (std::size_t e = 0; e < result.epoch_losses.size(); ++e)
      std::cerr << "epoch " << e + 1 << " loss " << result.epoch_losses[e] << '\n';
  } else {
    throw UsageError("--backend: expected tiny-lm or memorize");
  }
  write_file_atomic(a.out, out.str());
  manifest.outputs.push_back(a.out);
  return 0;
}

struct GenerateArgs {
  std::string model, endpoint, data, out;
  std::size_t beam_width = 10, num_return = 5, max_new_tokens = 64;
  bool no_dedup = false;
};

int cmd_generate(GenerateArgs a, RunManifest& manifest) {
  if (!a.model.empty() && !a.endpoint.empty()) throw UsageError("--model and --endpoint are mutually exclusive");
  if (a.model.empty() && a.endpoint.empty())
    if (const char* env = std::getenv("FLSEQ_ENDPOINT"); env && *env) a.endpoint = env;
  if (a.model.empty() && a.endpoint.empty())
    throw UsageError("one of --model or --endpoint (or FLSEQ_ENDPOINT) is required");

  BeamConfig beam{a.beam_width, a.num_return, a.max_new_tokens};
  try {
    beam.validate();
  } catch (const Error& e) {
    throw UsageError(std::string("--beam-width/--num-return/--max-new-tokens: ") + e.what());
  }
  const auto examples = read_sg_dataset(a.data);

  std::vector<CandidateRecord> records;
  std::set<std::string> done;
  auto for_each_pair = [&](auto&& produce) {
    for (const auto& ex : examples) {
      if (!done.insert(ex.pair_id).second) continue;
      records.push_back({ex.pair_id, produce(ex)});
    }
  };

  if (!a.endpoint.empty()) {
    RemoteClient client(a.endpoint);
    for_each_pair([&](const SGExample& ex) {
      auto c = client.generate(ex.pair_id, ex.input_text, beam.num_return, beam.max_new_tokens);
      return a.no_dedup ? c : dedup_candidates(std::move(c));
    });
    manifest.config["endpoint"] = a.endpoint;
  } else {
    const auto model = load_model(a.model);
    manifest.inputs.push_back(a.model);
    std::visit(
        [&](const auto& m) {
          using M = std::decay_t<decltype(m)>;
          for_each_pair([&](const SGExample& ex) {
            if constexpr (std::is_same_v<M, TinyLM<float>>) {
              TinyLMSession<float> session(m);
              return generate_patches(session, ex.input_text, beam, !a.no_dedup);
            } else {
              return generate_patches(m, ex.input_text, beam, !a.no_dedup);
            }
          });
        },
        model);
  }

  std::ostringstream out;
  write_candidates(out, records);
  write_file_atomic(a.out, out.str());
  manifest.outputs.push_back(a.out);
  manifest.config.update({{"beam_width", beam.beam_width},
                          {"num_return", beam.num_return},
                          {"max_new_tokens", beam.max_new_tokens},
                          {"dedup", !a.no_dedup}});
  manifest.results["examples"] = records.size();
  return 0;
}

struct EvaluateArgs {
  std::string candidates, pairs, mode = "line_number", out, csv, run_tag;
};

int cmd_evaluate(const EvaluateArgs& a, RunManifest& manifest) {
  const auto mode = parse_match_mode(a.mode);
  if (!mode) throw UsageError("--mode: expected line_number, sequence or number_only");
  const auto records = read_candidates(a.candidates);
  const auto ingested = ingest_pairs(a.pairs);
  const auto report = evaluate(records, ingested.pairs, *mode, a.run_tag);
  write_file_atomic(a.out, to_json(report).dump(2) + "\n");
  const auto csv_path = a.csv.empty() ? a.out + ".csv" : a.csv;
  std::ostringstream csv;
  write_report_csv(csv, report);
  write_file_atomic(csv_path, csv.str());
  manifest.outputs = {a.out, csv_path};
  manifest.config = {{"mode", a.mode}, {"run_tag", a.run_tag}};
  manifest.results = to_json(report)["top_n"];
  std::cout << summarize(report) << '\n';
  return 0;
}

struct RankArgs {
  std::string input, formula, out, function_lines;
};

int write_ranking(SuspiciousnessRanking ranking, const RankArgs& a, RunManifest& manifest) {
  if (!a.function_lines.empty()) ranking = restrict_to_function(ranking, parse_line_spec(a.function_lines));
  write_file_atomic(a.out, to_json(ranking).dump(2) + "\n");
  manifest.outputs.push_back(a.out);
  manifest.config = {{"formula", a.formula}, {"function_lines", a.function_lines}};
  return 0;
}

int cmd_sbfl(const RankArgs& a, RunManifest& manifest) {
  const auto formula = parse_sbfl_formula(a.formula);
  if (!formula) throw UsageError("--formula: expected ochiai, jaccard, tarantula or dstar2");
  return write_ranking(sbfl_score(coverage_from_json(read_json_file(a.input)), *formula), a, manifest);
}

int cmd_mbfl(const RankArgs& a, RunManifest& manifest) {
  const auto formula = parse_mbfl_formula(a.formula);
  if (!formula) throw UsageError("--formula: expected muse or metallaxis");
  return write_ranking(mbfl_score(kill_from_json(read_json_file(a.input)), *formula), a, manifest);
}

struct SplitArgs {
  std::string ids, scheme = "ratio", out;
  std::size_t k = 5;
  std::uint64_t seed = 0;
};

int cmd_split(const SplitArgs& a, RunManifest& manifest) {
  SplitScheme scheme;
  if (a.scheme == "ratio") {
    scheme.kind = SplitScheme::Kind::Ratio811;
  } else if (a.scheme == "kfold") {
    scheme.kind = SplitScheme::Kind::KFold;
    scheme.k = a.k;
  } else {
    throw UsageError("--scheme: expected ratio or kfold");
  }
  const auto ids = read_id_list(a.ids);
  const auto folds = split(ids, scheme, a.seed);
  const std::size_t n_folds = scheme.kind == SplitScheme::Kind::KFold ? scheme.k : 3;
  std::vector<std::size_t> sizes(n_folds, 0);
  nlohmann::json assignment = nlohmann::json::array();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    assignment.push_back({{"id", ids[i]}, {"fold", folds[i]}});
    ++sizes[folds[i]];
  }
  nlohmann::json out{{"scheme", a.scheme}, {"seed", a.seed}, {"fold_sizes", sizes}, {"assignment", assignment}};
  if (scheme.kind == SplitScheme::Kind::Ratio811) out["fold_names"] = {"train", "valid", "test"};
  write_file_atomic(a.out, out.dump(2) + "\n");
  manifest.outputs.push_back(a.out);
  manifest.seed = a.seed;
  manifest.config = {{"scheme", a.scheme}, {"k", a.k}};
  manifest.results["fold_sizes"] = sizes;
  return 0;
}

struct ReportArgs {
  std::vector<std::string> runs;
  std::string out;
};

int cmd_report(const ReportArgs& a, RunManifest& manifest) {
  std::vector<EvalReport> reports;
  for (const auto& path : a.runs) {
    auto r = eval_report_from_json(read_json_file(path));
    if (r.run_tag.empty()) r.run_tag = path;
    reports.push_back(std::move(r));
  }
  const auto agg = aggregate_runs(reports);
  write_file_atomic(a.out, to_json(agg).dump(2) + "\n");
  manifest.outputs.push_back(a.out);
  manifest.results = to_json(agg)["top_n"];
  std::cout << summarize(agg) << '\n';
  return 0;
}

int run(const std::vector<std::string>& args);

int cmd_replay(const std::string& manifest_path) {
  const auto j = read_json_file(manifest_path);
  if (!j.contains("argv") || !j["argv"].is_array())
    throw Error(ErrorKind::MalformedRecord, "manifest lacks argv");
  auto argv = j["argv"].get<std::vector<std::string>>();
  if (!argv.empty() && argv.front() == "replay") throw UsageError("refusing to replay a replay");
  return run(argv);
}

int run(const std::vector<std::string>& args) {
  CLI::App app{"Fault localization by sequence generation", "flseq"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  PreprocessArgs pre;
  auto* sc_pre = app.add_subcommand("preprocess", "Build an SG dataset from pairs or injected faults");
  sc_pre->add_option("--pairs", pre.pairs, "Pair records (or clean sources with --inject)")->required();
  sc_pre->add_option("--out", pre.out, "SG dataset to write")->required();
  sc_pre->add_option("--variant", pre.variant, "numbered | unnumbered | number-only");
  sc_pre->add_flag("--inject", pre.inject, "Synthesize pairs by fault injection first");
  sc_pre->add_option("--mutators", pre.mutators, "Comma-separated mutator kinds");
  sc_pre->add_option("--seed", pre.seed);
  sc_pre->add_option("--count", pre.count, "Pairs to synthesize (default: one per source)");
  sc_pre->add_option("--emit-pairs", pre.emit_pairs, "Also write the labeled pairs");

  TrainArgs tr;
  auto* sc_train = app.add_subcommand("train", "Fit a model backend on an SG dataset");
  sc_train->add_option("--data", tr.data)->required();
  sc_train->add_option("--config", tr.config, "TinyLM config JSON");
  sc_train->add_option("--out", tr.out)->required();
  sc_train->add_option("--backend", tr.backend, "tiny-lm | memorize");
  sc_train->add_option("--seed", tr.seed);
  sc_train->add_option("--epochs", tr.epochs);

  GenerateArgs gen;
  auto* sc_gen = app.add_subcommand("generate", "Beam-search patch candidates");
  sc_gen->add_option("--model", gen.model);
  sc_gen->add_option("--endpoint", gen.endpoint, "Remote server URL (env FLSEQ_ENDPOINT)");
  sc_gen->add_option("--data", gen.data)->required();
  sc_gen->add_option("--beam-width", gen.beam_width);
  sc_gen->add_option("--num-return", gen.num_return);
  sc_gen->add_option("--max-new-tokens", gen.max_new_tokens);
  sc_gen->add_flag("--no-dedup", gen.no_dedup, "Keep duplicate line numbers");
  sc_gen->add_option("--out", gen.out)->required();

  EvaluateArgs ev;
  auto* sc_eval = app.add_subcommand("evaluate", "Top-N report for a candidates file");
  sc_eval->add_option("--candidates", ev.candidates)->required();
  sc_eval->add_option("--pairs", ev.pairs)->required();
  sc_eval->add_option("--mode", ev.mode, "line_number | sequence | number_only");
  sc_eval->add_option("--out", ev.out)->required();
  sc_eval->add_option("--csv", ev.csv, "CSV path (default <out>.csv)");
  sc_eval->add_option("--run-tag", ev.run_tag);

  RankArgs sb, mb;
  auto* sc_sbfl = app.add_subcommand("sbfl", "Spectrum-based suspiciousness");
  sc_sbfl->add_option("--coverage", sb.input)->required();
  sc_sbfl->add_option("--formula", sb.formula)->required();
  sc_sbfl->add_option("--function-lines", sb.function_lines, "Restrict to lines, e.g. 10-25");
  sc_sbfl->add_option("--out", sb.out)->required();
  auto* sc_mbfl = app.add_subcommand("mbfl", "Mutation-based suspiciousness");
  sc_mbfl->add_option("--kill", mb.input)->required();
  sc_mbfl->add_option("--formula", mb.formula)->required();
  sc_mbfl->add_option("--function-lines", mb.function_lines);
  sc_mbfl->add_option("--out", mb.out)->required();

  SplitArgs sp;
  auto* sc_split = app.add_subcommand("split", "Seeded 8:1:1 or k-fold split");
  sc_split->add_option("--ids", sp.ids, "One id per line")->required();
  sc_split->add_option("--scheme", sp.scheme, "ratio | kfold");
  sc_split->add_option("--k", sp.k);
  sc_split->add_option("--seed", sp.seed);
  sc_split->add_option("--out", sp.out)->required();

  ReportArgs rep;
  auto* sc_rep = app.add_subcommand("report", "Aggregate run reports (mean of best three)");
  sc_rep->add_option("--runs", rep.runs)->required()->expected(3, 1000);
  sc_rep->add_option("--out", rep.out)->required();

  std::string replay_path;
  auto* sc_replay = app.add_subcommand("replay", "Re-run the command recorded in a manifest");
  sc_replay->add_option("manifest", replay_path)->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  RunManifest manifest;
  manifest.argv = args;
  auto* sc = app.get_subcommands().front();
  manifest.command = sc->get_name();
  std::string primary;
  int rc = 0;
  if (sc == sc_pre) {
    manifest.inputs = {pre.pairs};
    manifest.seed = pre.seed;
    manifest.config = {{"variant", pre.variant}, {"inject", pre.inject}, {"mutators", pre.mutators},
                       {"count", pre.count}};
    rc = cmd_preprocess(pre, manifest);
    primary = pre.out;
  } else if (sc == sc_train) {
    manifest.inputs = {tr.data};
    if (!tr.config.empty()) manifest.inputs.push_back(tr.config);
    rc = cmd_train(tr, manifest);
    primary = tr.out;
  } else if (sc == sc_gen) {
    manifest.inputs = {gen.data};
    rc = cmd_generate(gen, manifest);
    primary = gen.out;
  } else if (sc == sc_eval) {
    manifest.inputs = {ev.candidates, ev.pairs};
    rc = cmd_evaluate(ev, manifest);
    primary = ev.out;
  } else if (sc == sc_sbfl) {
    manifest.inputs = {sb.input};
    rc = cmd_sbfl(sb, manifest);
    primary = sb.out;
  } else if (sc == sc_mbfl) {
    manifest.inputs = {mb.input};
    rc = cmd_mbfl(mb, manifest);
    primary = mb.out;
  } else if (sc == sc_split) {
    manifest.inputs = {sp.ids};
    rc = cmd_split(sp, manifest);
    primary = sp.out;
  } else if (sc == sc_rep) {
    manifest.inputs = rep.runs;
    rc = cmd_report(rep, manifest);
    primary = rep.out;
  } else if (sc == sc_replay) {
    return cmd_replay(replay_path);
  }
  if (rc == 0) manifest.write(primary);
  return rc;
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MalformedRecord:
    case ErrorKind::Io:
    case ErrorKind::InvalidConfig:
      return kExitUsage;
    default:
      return kExitFailure;
  }
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    return run(args);
  } catch (const UsageError& e) {
    std::cerr << "flseq: " << e.what() << '\n';
    return kExitUsage;
  } catch (const flseq::Error& e) {
    std::cerr << "flseq: " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "flseq: " << e.what() << '\n';
    return kExitFailure;
  }
}
