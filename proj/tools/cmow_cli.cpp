// Command-line front end over the C API.

#include <CLI11.hpp>

#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "cmow/cmow.h"

namespace {

struct Flag {
  const char* name;
  const char* key;
  const char* help;
};

// Flags shared by every subcommand, each mapping onto one config key.
const Flag kFlags[] = {
    {"--seed", "seed", "training and initialization seed"},
    {"--threads", "threads", "worker threads (0 = all cores)"},
    {"--precision", "precision", "narrow (float32) or wide (float64)"},
    {"--alpha", "alpha", "weight of the hard loss"},
    {"--temperature", "temperature", "distillation temperature"},
    {"--encoding", "encoding", "pair encoding: diffcat or joint"},
    {"--init", "init", "starting checkpoint, or 'random'"},
    {"--teacher", "teacher", "teacher records (TDR1), or 'none'"},
    {"--out", "out", "output directory"},
    {"--input", "input", "text file to encode, one sentence per line"},
    {"--vocab", "vocab", "vocab.txt"},
    {"--corpus", "corpus", "pretraining corpus, one sentence per line"},
    {"--task", "task", "training TSV"},
    {"--dev", "dev", "dev TSV"},
    {"--checkpoint", "checkpoint", "checkpoint to encode, evaluate or inspect"},
    {"--kind", "kind", "embedding kind"},
};

struct Options {
  std::string config_file;
  std::map<std::string, std::string> flags;
  std::vector<std::string> assignments;
  bool quiet = false;
};

int fail(cmow_status status, const char* what) {
  std::fprintf(stderr, "error: %s: %s\n", what, cmow_last_error());
  return static_cast<int>(status);
}

int run(const std::string& command, const Options& opt) {
  cmow_config* config = nullptr;
  if (auto s = cmow_config_new(&config); s != CMOW_OK) return fail(s, "config");
  struct Free {
    cmow_config* c;
    ~Free() { cmow_config_free(c); }
  } guard{config};

  if (!opt.config_file.empty()) {
    if (auto s = cmow_config_load(config, opt.config_file.c_str()); s != CMOW_OK) return fail(s, "config");
  }
  for (const auto& [key, value] : opt.flags) {
    if (auto s = cmow_config_set(config, key.c_str(), value.c_str()); s != CMOW_OK) return fail(s, "config");
  }
  for (const auto& a : opt.assignments) {
    if (auto s = cmow_config_assign(config, a.c_str()); s != CMOW_OK) return fail(s, "--set");
  }

  char* summary = nullptr;
  if (auto s = cmow_run(config, command.c_str(), &summary); s != CMOW_OK) return fail(s, command.c_str());
  if (!opt.quiet) std::printf("%s\n", summary);
  cmow_string_free(summary);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CMOW/CBOW hybrid sentence embeddings: pretraining, distillation, fine-tuning"};
  app.set_version_flag("--version", cmow_version());
  app.require_subcommand(1);

  Options opt;
  const std::vector<std::pair<const char*, const char*>> commands = {
      {"pretrain", "masked-language-model pretraining, optionally distilling from teacher records"},
      {"finetune", "classification fine-tuning with early stopping"},
      {"encode", "write sentence encodings for --input"},
      {"eval", "score a checkpoint on its dev data"},
      {"bench", "time pooled encoding of random batches"},
      {"inspect-checkpoint", "print a checkpoint's header, sections and metadata"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opt.config_file, "key = value config file")->check(CLI::ExistingFile);
    for (const auto& f : kFlags) sub->add_option(f.name, opt.flags[f.key], f.help);
    sub->add_option("--set", opt.assignments, "override any config key: --set key=value")->take_all();
    sub->add_flag("-q,--quiet", opt.quiet, "do not print the JSON summary");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return CMOW_ERR_CONFIG;
  }

  // Only flags given on the command line override the config file.
  Options given = opt;
  given.flags.clear();
  auto* sub = app.get_subcommands().front();
  for (const auto& f : kFlags) {
    if (sub->count(f.name) > 0) given.flags[f.key] = opt.flags[f.key];
  }
  return run(sub->get_name(), given);
}
