#pragma once

namespace sdsd {

// the expcli entry point, separated from main() so tests can drive it
int cli_main(int argc, char** argv);

}  // namespace sdsd
