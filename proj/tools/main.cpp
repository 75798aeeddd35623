#include <string>
#include <vector>

#include "condbisim/harness.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return condbisim::run(args);
}
