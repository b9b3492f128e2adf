// Copyright 2026 The sketchgc Authors. All Rights Reserved.
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
// =============================================================================

#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <string>

#include "commands.hpp"

namespace cli = sketchgc::cli;

int main(int argc, char** argv) {
  CLI::App app{"sketchgc: sketch-based gradient compression toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::map<std::string, std::string> flags;
  std::map<std::string, CLI::App*> subs;
  for (const auto& name : cli::commands()) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "key = value config file");
    for (const auto& key : cli::known_keys()) sub->add_option("--" + key, flags[key]);
    subs[name] = sub;
  }
  subs["verify"]->description("run statistical verification suites");
  subs["train"]->description("simulate distributed error-feedback SGD");
  subs["bench-comm"]->description("tabulate payload sizes");
  subs["topk"]->description("check the block Top-K energy bound");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return cli::kExitUsage;
  }

  std::string command;
  for (const auto& [name, sub] : subs) {
    if (sub->parsed()) command = name;
  }
  auto* sub = subs[command];

  cli::RunConfig cfg;
  try {
    if (!config_path.empty()) cli::load_config_file(cfg, config_path);
    for (const auto& key : cli::known_keys()) {
      if (sub->get_option("--" + key)->count() > 0) cfg.set(key, flags[key]);
    }
  } catch (const sketchgc::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return cli::kExitUsage;
  }

  cli::Sink sink{std::cout, {}};
  const int code = cli::run_command(command, cfg, sink, std::cerr);
  if (sink.files.empty()) return code;

  std::string prefix = cfg.str("out", command == "train" ? "train" : "");
  try {
    if (prefix.empty()) {
      for (const auto& [suffix, content] : sink.files) std::cout << content;
    } else {
      cli::write_files(sink, prefix);
    }
  } catch (const sketchgc::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return cli::kExitUsage;
  }
  return code;
}
