#include <exception>
#include <iostream>

#include "greedydml/cli.hpp"

int main(int argc, char** argv) {
  using namespace greedydml;
  try {
    const RunManifest manifest =
        parse_args(std::vector<std::string>(argv + 1, argv + argc));
    return run_manifest(manifest, std::cout, std::cerr);
  } catch (const UnknownFlag& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
