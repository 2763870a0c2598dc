// Serves one site's proxy at the address the topology assigns it. Runs until
// SIGINT or SIGTERM.

#include <csignal>
#include <iostream>

#include <CLI11.hpp>

#include "circulate/error.hpp"
#include "circulate/proxy.hpp"
#include "circulate/workloads.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Proxy daemon colocated with a site's services"};
  std::string site, topology_file, workloads = "all";
  app.add_option("--site", site, "Site id in the topology")->required();
  app.add_option("--topology", topology_file, "Topology JSON file")->required()->check(CLI::ExistingFile);
  app.add_option("--workloads", workloads, "\"all\" or a comma-separated list of operations");
  CLI11_PARSE(app, argc, argv);

  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  try {
    const auto topology = circulate::load_topology(topology_file);
    if (site == "engine" || !topology.contains(site)) {
      throw circulate::Error(circulate::ErrorCode::kUnknownSite, site);
    }
    const auto& addr = topology.address_of(site);
    circulate::ProxyServer server(site, topology, circulate::select_services(workloads), addr.host,
                                  addr.port);
    server.start();
    std::cout << "proxy " << site << " listening on " << addr.host << ":" << server.port()
              << std::endl;
    int sig = 0;
    sigwait(&signals, &sig);
    server.stop();
  } catch (const std::exception& e) {
    std::cerr << "proxy: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
