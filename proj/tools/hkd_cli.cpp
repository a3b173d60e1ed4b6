// hkd: data generation, teacher-file validation, training, evaluation,
// decoding, gradient checks and the tau/K sweep.
//
// Exit codes: 0 success, 1 usage or config error, 2 data or validation error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "hkd/hkd.hpp"

namespace {

constexpr int kUsage = 1;
constexpr int kData = 2;

hkd::RunConfig resolve_config(const std::string& path, const std::vector<std::string>& overrides) {
  hkd::RunConfig cfg = path.empty() ? hkd::RunConfig{} : hkd::load_config(path);
  for (const auto& o : overrides) hkd::apply_override(cfg, o);
  cfg.validate();
  return cfg;
}

std::string checkpoint_path(const std::string& ckpt, const std::string& run_dir) {
  if (ckpt == "best" || ckpt == "last") return run_dir + "/" + ckpt + ".ckpt";
  return ckpt;
}

template <class T>
std::vector<T> parse_list(const std::string& text) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::istringstream is(item);
    T v{};
    if (!(is >> v) || !is.eof()) throw hkd::ConfigError("cannot parse list element '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw hkd::ConfigError("empty list");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CIF speech recognizer with hierarchical knowledge distillation"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");

  hkd::SyntheticConfig gen;
  std::string gen_out = "data";
  std::size_t gen_teacher_dim = 0;
  std::uint64_t gen_teacher_seed = 7;
  auto* gen_cmd = app.add_subcommand("gen-data", "write a synthetic dataset");
  gen_cmd->add_option("--out", gen_out, "output directory")->capture_default_str();
  gen_cmd->add_option("--vocab", gen.vocab, "vocabulary size including the 4 reserved ids")->capture_default_str();
  gen_cmd->add_option("--train", gen.train)->capture_default_str();
  gen_cmd->add_option("--dev", gen.dev)->capture_default_str();
  gen_cmd->add_option("--test", gen.test)->capture_default_str();
  gen_cmd->add_option("--min-tokens", gen.min_tokens, "shortest target, <EOS> included")->capture_default_str();
  gen_cmd->add_option("--max-tokens", gen.max_tokens)->capture_default_str();
  gen_cmd->add_option("--frames-per-token", gen.frames_per_token)->capture_default_str();
  gen_cmd->add_option("--jitter", gen.jitter, "relative duration jitter")->capture_default_str();
  gen_cmd->add_option("--noise", gen.noise, "feature noise sigma")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed)->capture_default_str();
  gen_cmd->add_option("--min-frames-per-target", gen.min_frames_per_target,
                      "stretch the final <EOS> segment to at least this many frames per target token (0: off)")
      ->capture_default_str();
  gen_cmd->add_option("--teacher-dim", gen_teacher_dim, "also write synthetic-teacher .emb files of this width");
  gen_cmd->add_option("--teacher-seed", gen_teacher_seed)->capture_default_str();

  std::string emb_path, data_dir = "data", split = "train";
  std::size_t expected_dim = 0;
  auto* export_cmd = app.add_subcommand("export-check", "validate an HKDEMB1 file against a dataset split");
  export_cmd->add_option("--emb", emb_path, "HKDEMB1 file")->required();
  export_cmd->add_option("--data", data_dir, "dataset directory")->capture_default_str();
  export_cmd->add_option("--split", split)->capture_default_str();
  export_cmd->add_option("--dim", expected_dim, "required teacher width");

  std::string config_path;
  std::vector<std::string> overrides;
  auto add_config = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "key=value config file");
    cmd->add_option("--set", overrides, "override one config key (key=value), repeatable");
  };
  auto* train_cmd = app.add_subcommand("train", "train a model");
  add_config(train_cmd);

  std::string ckpt = "best", run_dir;
  std::size_t beam = 1;
  auto* eval_cmd = app.add_subcommand("eval", "print dev and test CER of a checkpoint");
  eval_cmd->add_option("--ckpt", ckpt, "checkpoint path, or best/last inside the run directory")->capture_default_str();
  eval_cmd->add_option("--run", run_dir, "run directory (default: output_dir of the config)");
  eval_cmd->add_option("--data", data_dir, "dataset directory (default: data_dir of the checkpoint)");
  eval_cmd->add_option("--beam", beam)->capture_default_str();
  add_config(eval_cmd);

  std::string hyp_path = "hypotheses.txt";
  auto* decode_cmd = app.add_subcommand("decode", "write id<TAB>tokens hypotheses");
  decode_cmd->add_option("--ckpt", ckpt)->capture_default_str();
  decode_cmd->add_option("--run", run_dir);
  decode_cmd->add_option("--input", data_dir, "dataset directory")->required();
  decode_cmd->add_option("--split", split)->capture_default_str();
  decode_cmd->add_option("--beam", beam)->capture_default_str();
  decode_cmd->add_option("--output", hyp_path)->capture_default_str();
  add_config(decode_cmd);

  std::uint64_t suite_seed = 11;
  auto* grad_cmd = app.add_subcommand("gradcheck", "run the finite-difference gradient suite");
  grad_cmd->add_option("--seed", suite_seed)->capture_default_str();

  std::string taus = "0.02", negatives = "700", sweep_csv = "sweep.csv";
  auto* sweep_cmd = app.add_subcommand("sweep", "train one model per (tau, K) pair");
  sweep_cmd->add_option("--tau", taus, "comma-separated temperatures")->capture_default_str();
  sweep_cmd->add_option("--K", negatives, "comma-separated negative counts")->capture_default_str();
  sweep_cmd->add_option("--out", sweep_csv, "results CSV")->capture_default_str();
  add_config(sweep_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (gen_cmd->parsed()) {
      hkd::generate_synthetic(gen, gen_out, gen_teacher_dim, gen_teacher_seed);
      std::printf("wrote %zu/%zu/%zu utterances to %s\n", gen.train, gen.dev, gen.test, gen_out.c_str());
    } else if (export_cmd->parsed()) {
      const auto vocab = hkd::read_vocab(data_dir + "/vocab.txt").size();
      const auto ds = hkd::load_split(data_dir, split, vocab);
      const auto store =
          hkd::load_embedding_file(emb_path, expected_dim ? std::optional<std::size_t>(expected_dim) : std::nullopt);
      for (const auto& u : ds.utterances) hkd::align_check(store.at(u.id), u.targets.size());
      std::printf("ok: %zu records, D=%zu, all %zu utterances aligned\n", store.size(), store.dim(),
                  ds.utterances.size());
    } else if (train_cmd->parsed()) {
      hkd::Trainer trainer(resolve_config(config_path, overrides));
      const auto r = trainer.run();
      std::printf("steps=%zu best_dev_cer=%.6f best_epoch=%zu\n", r.steps, r.best_dev_cer, r.best_epoch);
    } else if (eval_cmd->parsed() || decode_cmd->parsed()) {
      const auto base = resolve_config(config_path, overrides);
      hkd::RunConfig echoed;
      const auto model = hkd::load_model(checkpoint_path(ckpt, run_dir.empty() ? base.output_dir : run_dir), &echoed);
      if (eval_cmd->parsed()) {
        const std::string dir = eval_cmd->count("--data") ? data_dir : echoed.data_dir;
        const auto vocab = hkd::read_vocab(dir + "/vocab.txt").size();
        for (const char* s : {"dev", "test"}) {
          const auto ds = hkd::load_split(dir, s, vocab);
          std::printf("%s_cer=%.6f\n", s, hkd::corpus_cer(model, ds, beam));
        }
      } else {
        const auto ds = hkd::load_split(data_dir, split, hkd::read_vocab(data_dir + "/vocab.txt").size());
        std::ofstream out(hyp_path);
        if (!out) throw hkd::DataError("cannot write '" + hyp_path + "'");
        hkd::ErrorCounter counter;
        for (std::size_t i = 0; i < ds.utterances.size(); ++i) {
          const auto hyp = hkd::recognize(model, ds.features<float>(i), beam);
          out << ds.utterances[i].id << '\t';
          for (std::size_t k = 0; k < hyp.tokens.size(); ++k) out << (k ? " " : "") << hyp.tokens[k];
          out << '\n';
          counter.add(hyp.tokens, ds.utterances[i].targets);
        }
        std::printf("decoded %zu utterances to %s (cer=%.6f)\n", ds.utterances.size(), hyp_path.c_str(),
                    counter.rate());
      }
    } else if (grad_cmd->parsed()) {
      bool all = true;
      for (const auto& r : hkd::run_gradient_suite(suite_seed)) {
        std::printf("%-24s %s\n", r.name.c_str(), hkd::describe(r.report).c_str());
        all = all && r.report.passed;
      }
      return all ? 0 : kData;
    } else if (sweep_cmd->parsed()) {
      const auto rows = hkd::sweep(resolve_config(config_path, overrides), parse_list<double>(taus),
                                   parse_list<std::size_t>(negatives), sweep_csv);
      std::printf("wrote %zu rows to %s\n", rows.size(), sweep_csv.c_str());
    }
  } catch (const hkd::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const hkd::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kData;
  }
  return 0;
}
