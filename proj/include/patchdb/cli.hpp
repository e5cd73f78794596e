#pragma once

// Command-line driver: gen-scene, ingest, etl, index, query, bench, stats.
// Returns 0 on success, 1 on validation or usage errors, 2 on runtime
// failures; usage errors go to standard error.

namespace patchdb {

int cli_main(int argc, char** argv);

}  // namespace patchdb
