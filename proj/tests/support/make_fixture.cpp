// Records a replay store by running the live stages against the scripted backend.
#include <filesystem>
#include <iostream>

#include "fixture_backend.hpp"
#include "synthpsych/errors.hpp"
#include "synthpsych/pipeline.hpp"

namespace fs = std::filesystem;
using namespace synthpsych;

int main(int argc, char** argv) {
  if (argc != 4) {
    std::cerr << "usage: make_fixture <config.ini> <store.jsonl> <scratch-dir>\n";
    return 2;
  }
  try {
    fixture::ensure_test_credential();
    pipeline::Context ctx;
    ctx.config = pipeline::load_config(argv[1]);
    ctx.config.transcript_mode = transport::StoreMode::Record;
    ctx.config.transcript_store = argv[2];
    ctx.config.out_dir = argv[3];
    ctx.force = true;
    ctx.backend = std::make_shared<fixture::ScriptedBackend>(ctx.config.embedding_dim);
    fs::remove(ctx.config.transcript_store);
    fs::remove_all(ctx.config.out_dir);

    pipeline::cmd_generate_personas(ctx);
    pipeline::cmd_administer(ctx);
    pipeline::cmd_cluster(ctx);
    std::cout << "recorded " << ctx.config.transcript_store << "\n";
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  }
}
